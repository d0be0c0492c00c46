use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::Posteriorgram;

pub const DEFAULT_MEDIAN_WINDOW: usize = 7;

/// Sliding median over one row with edge replication.
pub fn median_row(row: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::Config(format!(
            "median window must be odd and positive, got {window}"
        )));
    }
    let n = row.len();
    if n == 0 || window == 1 {
        return Ok(row.to_vec());
    }
    let half = window / 2;
    let mut buf = vec![0.0; window];
    let out = (0..n)
        .map(|t| {
            for (k, slot) in buf.iter_mut().enumerate() {
                let idx = (t + k).saturating_sub(half).min(n - 1);
                *slot = row[idx];
            }
            buf.sort_by(f64::total_cmp);
            buf[half]
        })
        .collect();
    Ok(out)
}

/// Class-wise median filter. `windows` holds one window per class, or a
/// single window shared by all classes.
pub fn median_filter(post: &Posteriorgram, windows: &[usize]) -> Result<Posteriorgram> {
    let c = post.n_classes();
    if windows.len() != 1 && windows.len() != c {
        return Err(Error::Shape(format!(
            "{} median windows for {c} classes",
            windows.len()
        )));
    }
    let mut scores = Array2::zeros(post.scores.raw_dim());
    for (k, row) in post.scores.rows().into_iter().enumerate() {
        let w = if windows.len() == 1 { windows[0] } else { windows[k] };
        let filtered = median_row(&row.to_vec(), w)?;
        scores.row_mut(k).assign(&ndarray::Array1::from(filtered));
    }
    Ok(Posteriorgram {
        clip_id: post.clip_id.clone(),
        scores,
        frame_hop: post.frame_hop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_one_is_identity() {
        let row = [0.3, 0.9, 0.1, 0.5];
        assert_eq!(median_row(&row, 1).unwrap(), row.to_vec());
    }

    #[test]
    fn isolated_spike_is_removed() {
        let out = median_row(&[0.0, 0.0, 1.0, 0.0, 0.0], 3).unwrap();
        assert_eq!(out, vec![0.0; 5]);
    }

    #[test]
    fn edges_replicate() {
        let out = median_row(&[1.0, 0.0, 0.0, 0.0], 5).unwrap();
        // frame 0 sees [1, 1, 1, 0, 0]
        assert_eq!(out, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn even_window_errors() {
        assert!(matches!(median_row(&[0.0], 4), Err(Error::Config(_))));
        assert!(matches!(median_row(&[0.0], 0), Err(Error::Config(_))));
    }

    #[test]
    fn per_class_windows() {
        let scores = ndarray::array![[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
        let post = Posteriorgram::new("a", scores, 0.2).unwrap();
        let out = median_filter(&post, &[1, 3]).unwrap();
        assert_eq!(out.scores, ndarray::array![[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]);
        assert!(median_filter(&post, &[1, 3, 5]).is_err());
    }

    proptest! {
        #[test]
        fn constant_rows_unchanged(v in 0.0f64..=1.0, n in 1usize..40, half in 0usize..6) {
            let row = vec![v; n];
            prop_assert_eq!(median_row(&row, 2 * half + 1).unwrap(), row);
        }

        #[test]
        fn binary_rows_without_short_runs_are_fixed(runs in prop::collection::vec(2usize..6, 1..12)) {
            let row: Vec<f64> = runs
                .iter()
                .enumerate()
                .flat_map(|(i, &len)| std::iter::repeat((i % 2) as f64).take(len))
                .collect();
            prop_assert_eq!(median_row(&row, 3).unwrap(), row);
        }

        #[test]
        fn binary_window3_output_without_short_runs_is_stable(bits in prop::collection::vec(any::<bool>(), 1..60)) {
            let row: Vec<f64> = bits.iter().map(|&b| b as u8 as f64).collect();
            let once = median_row(&row, 3).unwrap();
            let mut runs = Vec::new();
            for (i, v) in once.iter().enumerate() {
                if i == 0 || *v != once[i - 1] {
                    runs.push(0usize);
                }
                *runs.last_mut().unwrap() += 1;
            }
            prop_assume!(runs.iter().all(|&r| r >= 2) || runs.len() == 1);
            prop_assert_eq!(median_row(&once, 3).unwrap(), once);
        }
    }
}
