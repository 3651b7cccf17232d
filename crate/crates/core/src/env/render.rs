//! SVG renders and CSV dumps of environment trajectories.

use super::kitchen::{Held, Kitchen, KitchenState, PotStatus, Tile};
use super::mppmr::{Mppmr, MppmrState};
use std::fmt::Write as _;
use std::io;

/// Paths of both particles over the landmarks, arena drawn as a square.
pub fn mppmr_svg(m: &Mppmr, states: &[MppmrState]) -> String {
    let size = 400.0;
    let scale = size / (2.0 * m.bound);
    let px = |p: [f64; 2]| ((p[0] + m.bound) * scale, (m.bound - p[1]) * scale);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(s, r##"<rect width="{size}" height="{size}" fill="#fafafa" stroke="#333"/>"##);
    for (i, &l) in m.landmarks.iter().enumerate() {
        let (x, y) = px(l);
        let _ = writeln!(
            s,
            r##"<circle cx="{x:.1}" cy="{y:.1}" r="8" fill="#bbb"/><text x="{:.1}" y="{:.1}" font-size="12">L{i}</text>"##,
            x + 10.0,
            y - 10.0
        );
    }
    for (p, colour) in [(0usize, "#1f77b4"), (1, "#d62728")] {
        if states.is_empty() {
            break;
        }
        let pts: Vec<String> = states
            .iter()
            .map(|st| {
                let (x, y) = px(st.pos[p]);
                format!("{x:.1},{y:.1}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            pts.join(" ")
        );
        let (x, y) = px(states[states.len() - 1].pos[p]);
        let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="5" fill="{colour}"/>"#);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `t, p1x, p1y, p2x, p2y, reward, terminated` rows. `rewards[i]` is
/// the reward received on entering `states[i + 1]`.
pub fn mppmr_csv<W: io::Write>(w: W, states: &[MppmrState], rewards: &[f64]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "p1x", "p1y", "p2x", "p2y", "reward", "terminated"])?;
    for (i, st) in states.iter().enumerate() {
        let r = if i == 0 { 0.0 } else { rewards[i - 1] };
        out.write_record([
            st.t.to_string(),
            st.pos[0][0].to_string(),
            st.pos[0][1].to_string(),
            st.pos[1][0].to_string(),
            st.pos[1][1].to_string(),
            r.to_string(),
            (st.terminated as u8).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn tile_colour(t: Tile) -> &'static str {
    match t {
        Tile::Floor => "#f4f1e8",
        Tile::Counter => "#b08d57",
        Tile::OnionSource => "#e8c547",
        Tile::BowlSource => "#cfd8dc",
        Tile::Pot => "#555555",
        Tile::Serve => "#7cb342",
        Tile::Wall => "#333333",
    }
}

fn held_label(h: Held) -> &'static str {
    match h {
        Held::Nothing => "",
        Held::Onion => "o",
        Held::Bowl => "b",
        Held::Soup => "s",
    }
}

/// One board frame.
pub fn kitchen_svg(k: &Kitchen, s: &KitchenState) -> String {
    let cell = 48.0;
    let (w, h) = (k.layout.width as f64 * cell, k.layout.height as f64 * cell);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    for r in 0..k.layout.height {
        for c in 0..k.layout.width {
            let t = k.layout.tile((r, c));
            let _ = writeln!(
                out,
                r##"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="{}" stroke="#999"/>"##,
                c as f64 * cell,
                r as f64 * cell,
                tile_colour(t)
            );
        }
    }
    for (i, pot) in s.pots.iter().enumerate() {
        let (r, c) = k.layout.pots[i];
        let label = match pot.status {
            PotStatus::Idle => format!("{}/3", pot.onions),
            PotStatus::Cooking => format!("{}t", pot.timer),
            PotStatus::Ready => "ok".to_string(),
        };
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="14" fill="#fff">{label}</text>"##,
            c as f64 * cell + 10.0,
            r as f64 * cell + 28.0
        );
    }
    for (p, chef) in s.chefs.iter().enumerate() {
        let (r, c) = chef.pos;
        let (cx, cy) = (c as f64 * cell + cell / 2.0, r as f64 * cell + cell / 2.0);
        let colour = if p == 0 { "#1f77b4" } else { "#d62728" };
        let (dr, dc) = chef.facing.offset();
        let _ = writeln!(
            out,
            r#"<circle cx="{cx}" cy="{cy}" r="14" fill="{colour}"/><line x1="{cx}" y1="{cy}" x2="{}" y2="{}" stroke="black" stroke-width="3"/><text x="{}" y="{}" font-size="12" fill="white">{}</text>"#,
            cx + dc as f64 * 18.0,
            cy + dr as f64 * 18.0,
            cx - 4.0,
            cy + 4.0,
            held_label(chef.held)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Writes one row per step: chef poses and items, pot contents, reward and
/// the event vector.
pub fn kitchen_csv<W: io::Write>(w: W, states: &[KitchenState], rewards: &[f64], events: &[Vec<u8>]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n_pots = states.first().map_or(0, |s| s.pots.len());
    let mut header: Vec<String> = ["t", "p1_row", "p1_col", "p1_held", "p2_row", "p2_col", "p2_held"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for i in 0..n_pots {
        header.push(format!("pot{i}_onions"));
        header.push(format!("pot{i}_timer"));
    }
    header.push("reward".into());
    header.push("events".into());
    out.write_record(&header)?;
    for (i, st) in states.iter().enumerate() {
        let mut row = vec![st.t.to_string()];
        for chef in &st.chefs {
            row.push(chef.pos.0.to_string());
            row.push(chef.pos.1.to_string());
            row.push(format!("{:?}", chef.held).to_lowercase());
        }
        for pot in &st.pots {
            row.push(pot.onions.to_string());
            row.push(pot.timer.to_string());
        }
        let (r, e) = if i == 0 {
            (0.0, String::new())
        } else {
            (rewards[i - 1], events[i - 1].iter().map(|v| v.to_string()).collect::<String>())
        };
        row.push(r.to_string());
        row.push(e);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
