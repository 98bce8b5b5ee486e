use serde::{Deserialize, Serialize};

use super::grid::BinaryPattern;

/// Summary statistics of a binary image, used as the labeling proxy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorRecord {
    pub feature_coverage: f64,
    pub mean_feature_area: f64,
    pub feature_count: usize,
}

/// Coverage plus 4-connected component statistics.
pub fn compute_descriptors(img: &BinaryPattern) -> DescriptorRecord {
    let (h, w) = (img.height(), img.width());
    let fg = img.foreground();
    let mut seen = vec![false; h * w];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || img.data()[start] == 0 {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (i, j) = (p / w, p % w);
            let mut visit = |q: usize| {
                if !seen[q] && img.data()[q] == 1 {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if i > 0 {
                visit(p - w);
            }
            if i + 1 < h {
                visit(p + w);
            }
            if j > 0 {
                visit(p - 1);
            }
            if j + 1 < w {
                visit(p + 1);
            }
        }
    }
    DescriptorRecord {
        feature_coverage: fg as f64 / (h * w) as f64,
        mean_feature_area: if count == 0 { 0.0 } else { fg as f64 / count as f64 },
        feature_count: count,
    }
}
