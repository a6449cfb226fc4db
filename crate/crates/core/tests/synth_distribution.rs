use srf_tad::data::{generate_sequence, SynthConfig};

const SAMPLES: usize = 10_000;

/// Bin counts must lie within 3σ of a multinomial with the given probabilities.
fn assert_multinomial(name: &str, counts: &[usize], probs: &[f64]) {
    let n: usize = counts.iter().sum();
    for (i, (&c, &p)) in counts.iter().zip(probs).enumerate() {
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(
            (c as f64 - mean).abs() <= 3.0 * sigma,
            "{name} bin {i}: {c} vs expected {mean:.1} ± {:.1}",
            3.0 * sigma
        );
    }
}

#[test]
fn durations_labels_and_counts_are_uniform() {
    let cfg = SynthConfig {
        feature_dim: 3,
        noise_std: 0.0,
        ..SynthConfig::default()
    };
    let [dmin, dmax] = cfg.duration_range;
    let values = (dmin..=dmax).count();
    // 11 bins of 16 values; the last also takes the final value.
    let n_bins = 11;
    let bin_of = |d: usize| ((d - dmin) / 16).min(n_bins - 1);
    let mut bin_sizes = vec![0usize; n_bins];
    for d in dmin..=dmax {
        bin_sizes[bin_of(d)] += 1;
    }
    let duration_probs: Vec<f64> = bin_sizes.iter().map(|&s| s as f64 / values as f64).collect();

    let [imin, imax] = cfg.instances_per_sequence;
    let mut durations = vec![0usize; n_bins];
    let mut labels = vec![0usize; cfg.n_classes];
    let mut counts = vec![0usize; imax - imin + 1];
    let mut n = 0;
    let mut index = 0;
    while n < SAMPLES {
        let seq = generate_sequence(&cfg, index).unwrap();
        counts[seq.instances.len() - imin] += 1;
        for inst in &seq.instances {
            if n < SAMPLES {
                durations[bin_of(inst.duration() as usize)] += 1;
                labels[inst.label - 1] += 1;
                n += 1;
            }
        }
        index += 1;
    }
    assert_multinomial("duration", &durations, &duration_probs);
    assert_multinomial("label", &labels, &vec![1.0 / cfg.n_classes as f64; cfg.n_classes]);
    assert_multinomial("count", &counts, &vec![1.0 / counts.len() as f64; counts.len()]);
}
