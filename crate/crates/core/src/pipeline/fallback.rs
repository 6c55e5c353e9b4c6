use super::PipelineError;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn usable(v: &[f64]) -> bool {
    let n = norm(v);
    n > 0.0 && n.is_finite()
}

/// Cosine similarity of `image` against every row of `classes`.
pub fn cosine_scores(image: &[f64], classes: &[Vec<f64>]) -> Result<Vec<f64>, PipelineError> {
    if !usable(image) {
        return Err(PipelineError::DegenerateEmbedding("image".into()));
    }
    let image_norm = norm(image);
    classes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if c.len() != image.len() {
                return Err(PipelineError::DimensionMismatch {
                    expected: image.len(),
                    found: c.len(),
                    index: i,
                });
            }
            if !usable(c) {
                return Err(PipelineError::DegenerateEmbedding(format!("class #{i}")));
            }
            let dot: f64 = image.iter().zip(c).map(|(a, b)| a * b).sum();
            Ok(dot / (image_norm * norm(c)))
        })
        .collect()
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if s <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn orthonormal_case() {
        let s = cosine_scores(&[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(s, vec![1.0, 0.0]);
        assert_eq!(argmax(&s), Some(0));
    }

    #[test]
    fn hand_computed_dot_products() {
        // |[0.6, 0.8]| = 1, so the scores are the raw components
        let s = cosine_scores(&[0.6, 0.8], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((s[0] - 0.6).abs() < 1e-12 && (s[1] - 0.8).abs() < 1e-12);
        assert_eq!(argmax(&s), Some(1));
    }

    #[test]
    fn identical_classes_tie_to_first() {
        let s = cosine_scores(&[0.3, 0.1], &vec![vec![2.0, 5.0]; 4]).unwrap();
        assert_eq!(argmax(&s), Some(0));
    }

    #[test]
    fn zero_vectors_are_degenerate() {
        assert!(matches!(
            cosine_scores(&[0.0, 0.0], &[vec![1.0, 0.0]]),
            Err(PipelineError::DegenerateEmbedding(_))
        ));
        assert!(matches!(
            cosine_scores(&[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 0.0]]),
            Err(PipelineError::DegenerateEmbedding(_))
        ));
        assert!(matches!(
            cosine_scores(&[1.0, 0.0], &[vec![1.0]]),
            Err(PipelineError::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn argmax_survives_positive_scaling(
            image in prop::collection::vec(-1.0f64..1.0, 3),
            classes in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 1..6),
            scales in prop::collection::vec(0.01f64..100.0, 7),
        ) {
            prop_assume!(usable(&image) && classes.iter().all(|c| usable(c)));
            let base = argmax(&cosine_scores(&image, &classes).unwrap()).unwrap();
            let scaled_image: Vec<f64> = image.iter().map(|x| x * scales[0]).collect();
            let scaled: Vec<Vec<f64>> = classes
                .iter()
                .enumerate()
                .map(|(i, c)| c.iter().map(|x| x * scales[1 + i % 6]).collect())
                .collect();
            let scores = cosine_scores(&scaled_image, &scaled).unwrap();
            let moved = argmax(&scores).unwrap();
            // scaling may perturb the last bits, so only a near-tie can move the pick
            prop_assert!(moved == base || (scores[moved] - scores[base]).abs() < 1e-9);
        }
    }
}
