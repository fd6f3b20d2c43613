//! ASCII rendering of attention weights, one row per weight vector.

use hmmn_core::AttentionTrace;

const SHADES: &[u8] = b" .:-=+*#%@";

/// Maps each weight to a shade relative to the row maximum.
pub fn shade_row(weights: &[f64]) -> String {
    let max = weights.iter().copied().fold(0.0, f64::max);
    weights
        .iter()
        .map(|&w| {
            let level = if max > 0.0 { w / max } else { 0.0 };
            let i = (level * (SHADES.len() - 1) as f64).round() as usize;
            SHADES[i.min(SHADES.len() - 1)] as char
        })
        .collect()
}

fn argmax_label(weights: &[f64]) -> String {
    let (i, w) = weights
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &w)| {
            if w > best.1 {
                (i, w)
            } else {
                best
            }
        });
    format!("max {w:.3} @ {i}")
}

/// Renders a trace. `gold` and `predicted` label the answer rows.
pub fn render(trace: &AttentionTrace, gold: usize, predicted: usize) -> String {
    let mut out = String::new();
    let mark = |k: usize| match (k == gold, k == predicted) {
        (true, true) => " (gold, predicted)",
        (true, false) => " (gold)",
        (false, true) => " (predicted)",
        _ => "",
    };
    match trace {
        AttentionTrace::Hmmn { hops } => {
            for (k, chain) in hops.iter().enumerate() {
                out.push_str(&format!("answer {k}{}\n", mark(k)));
                for (t, hop) in chain.iter().enumerate() {
                    let h = t + 1;
                    out.push_str(&format!(
                        "  hop {h} subtitles |{}|  {}\n",
                        shade_row(&hop.delta),
                        argmax_label(&hop.delta)
                    ));
                    out.push_str(&format!(
                        "  hop {h} frames    |{}|  {}\n",
                        shade_row(&hop.zeta),
                        argmax_label(&hop.zeta)
                    ));
                }
            }
        }
        AttentionTrace::Memory { alpha } => {
            out.push_str(&format!("predicted {predicted}, gold {gold}\n"));
            for (t, a) in alpha.iter().enumerate() {
                out.push_str(&format!(
                    "  hop {} memory |{}|  {}\n",
                    t + 1,
                    shade_row(a),
                    argmax_label(a)
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shades_scale_to_row_max() {
        assert_eq!(shade_row(&[0.0, 0.5, 1.0]), " +@");
        assert_eq!(shade_row(&[0.1, 0.1]), "@@");
        assert_eq!(shade_row(&[0.0, 0.0]), "  ");
    }

    #[test]
    fn memory_trace_has_one_row_per_hop() {
        let trace = AttentionTrace::Memory {
            alpha: vec![vec![0.2, 0.8], vec![0.6, 0.4]],
        };
        let text = render(&trace, 1, 1);
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("max 0.800 @ 1"));
    }
}
