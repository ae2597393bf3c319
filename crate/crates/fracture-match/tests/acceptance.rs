//! Acceptance checklist for the library, one test per criterion.
//!
//! Each test exercises one headline requirement end to end and prints a
//! `[criterion N] PASS` line on success; run with `--nocapture` to see the
//! lines. The checklist mirrors README's acceptance section: perfect
//! classification on disjoint synthetic corpora, exact counting and
//! frequency identities, the band-sweep shape against replica fidelity,
//! blur direction, the Parseval equivalence, matrix-t correctness, the
//! posterior algebra, and the preprocessing contracts.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Continuous, StudentsT};

use fracture_match::classifier::{
    band_sweep, classify_with_threshold, posterior_from_log_densities, train, Decision,
    SweepOptions, SweepReport, SweepRow, TrainOptions,
};
use fracture_match::features::{
    build_features, enumerate_pairs, PreprocessOptions, SurfacePair, Truth,
};
use fracture_match::heightmap::{Axis, HeightMap, ImageSequence, Role};
use fracture_match::mvt::{fit, FitOptions, MatrixTParams};
use fracture_match::spectral::{band_correlation, band_filter, fft2, taper_window, BandSet};
use fracture_match::synth::{generate_corpus, SynthConfig};

/// Strip geometry for the heavyweight criteria: six 512 x 512 px windows at
/// the default 0.625 um pitch, keeping the full suite inside the runtime
/// budget while preserving every frequency band of interest.
fn runtime_geometry(seed: u64) -> SynthConfig {
    SynthConfig { strip_width: 1792, strip_height: 512, seed, ..SynthConfig::default() }
}

// ── criterion 1: perfect classification on disjoint corpora ─────────────

#[test]
fn criterion_01_perfect_classification_on_disjoint_corpora() {
    let start = Instant::now();
    let train_corpus = generate_corpus(&runtime_geometry(101), 10, 6).unwrap();
    let eval_corpus = generate_corpus(&runtime_geometry(202), 10, 6).unwrap();

    let bands = BandSet::classification();
    let preprocess = PreprocessOptions::default();
    let options = TrainOptions {
        prior_match: 0.5,
        fit: FitOptions::default(),
        preprocess: preprocess.clone(),
        blur: false,
    };

    // Fit on the base-tip pairs of one corpus.
    let train_pairs = enumerate_pairs(
        &train_corpus.bases,
        &train_corpus.tips,
        Role::Base,
        Role::Tip,
    )
    .unwrap();
    let features = build_features(&train_pairs, &bands, &preprocess, false).unwrap();
    let (matches, nonmatches): (Vec<_>, Vec<_>) =
        features.into_iter().partition(|f| f.truth == Truth::Match);
    let model = train(&matches, &nonmatches, &options).unwrap();

    // Score every pairing kind of the disjoint corpus.
    let mut eval_pairs: Vec<SurfacePair> = Vec::new();
    for (left, right, lrole, rrole) in [
        (&eval_corpus.bases, &eval_corpus.tips, Role::Base, Role::Tip),
        (&eval_corpus.replicas, &eval_corpus.bases, Role::Replica, Role::Base),
        (&eval_corpus.replicas, &eval_corpus.tips, Role::Replica, Role::Tip),
    ] {
        eval_pairs.extend(enumerate_pairs(left, right, lrole, rrole).unwrap());
    }
    let eval_features = build_features(&eval_pairs, &bands, &preprocess, false).unwrap();

    let mut n_match = 0usize;
    let mut n_nonmatch = 0usize;
    let mut worst_match_posterior = 1.0f64;
    let mut worst_nonmatch_posterior = 0.0f64;
    for feature in &eval_features {
        let report = classify_with_threshold(&model, feature, 0.5).unwrap();
        match report.truth {
            Truth::Match => {
                n_match += 1;
                worst_match_posterior = worst_match_posterior.min(report.posterior);
                assert_eq!(
                    report.decision,
                    Decision::Match,
                    "false negative on {} (posterior {})",
                    report.pair_id,
                    report.posterior
                );
            }
            Truth::NonMatch => {
                n_nonmatch += 1;
                worst_nonmatch_posterior = worst_nonmatch_posterior.max(report.posterior);
                assert_eq!(
                    report.decision,
                    Decision::NonMatch,
                    "false positive on {} (posterior {})",
                    report.pair_id,
                    report.posterior
                );
            }
            Truth::Unknown => panic!("corpus pair {} lost its label", report.pair_id),
        }
    }
    assert_eq!(n_match, 30);
    assert_eq!(n_nonmatch, 270);
    assert!(
        worst_match_posterior > 0.99,
        "weakest match posterior {worst_match_posterior}"
    );
    assert!(
        worst_nonmatch_posterior < 0.01,
        "strongest non-match posterior {worst_nonmatch_posterior}"
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "took {elapsed:.0} s, budget 300 s");
    println!(
        "[criterion 1] PASS 0 errors over 30 match + 270 non-match pairs; weakest match posterior 1 - {:.1e}, strongest non-match {:.1e}; {:.0} s",
        1.0 - worst_match_posterior,
        worst_nonmatch_posterior,
        elapsed
    );
}

// ── criterion 2: counting identities ─────────────────────────────────────

#[test]
fn criterion_02_pair_enumeration_counts() {
    let sequence = |label: &str, role: Role| {
        let images = (0..6)
            .map(|k| HeightMap::zeros(format!("{label}/img{k}"), 8, 8, 1.0).unwrap())
            .collect();
        Arc::new(ImageSequence::from_images(label, role, images, 0.5).unwrap())
    };
    let bases: Vec<_> = (0..10).map(|i| sequence(&format!("rod{i:02}"), Role::Base)).collect();
    let tips: Vec<_> = (0..10).map(|i| sequence(&format!("rod{i:02}"), Role::Tip)).collect();

    let pairs = enumerate_pairs(&bases, &tips, Role::Base, Role::Tip).unwrap();
    let matched: Vec<_> = pairs.iter().filter(|p| p.truth == Truth::Match).collect();
    let nonmatched: Vec<_> = pairs.iter().filter(|p| p.truth == Truth::NonMatch).collect();
    assert_eq!(matched.len(), 10);
    assert_eq!(nonmatched.len(), 90);

    let matched_images: usize = matched.iter().map(|p| p.len()).sum();
    let nonmatched_images: usize = nonmatched.iter().map(|p| p.len()).sum();
    assert_eq!(matched_images, 60);
    assert_eq!(nonmatched_images, 540);
    println!(
        "[criterion 2] PASS 10 rods x 6 images enumerate to 10/90 surface pairs and 60/540 image pairs"
    );
}

// ── criterion 3: frequency-resolution identity ────────────────────────────

#[test]
fn criterion_03_frequency_resolution_identity() {
    let map = HeightMap::zeros("grid", 1024, 1024, 0.625).unwrap();
    let spec = fft2(&map).unwrap();
    let (fx, fy) = spec.freq_resolution();
    assert_eq!(fx, 1.5625);
    assert_eq!(fy, 1.5625);
    println!("[criterion 3] PASS 1024 px x 0.625 um -> exactly 1.5625 1/mm per line");
}

// ── criteria 4 and 5: band sweep against replica fidelity ────────────────

/// Ten-band survey of replica-tip pairs at the runtime geometry.
///
/// Despiking is disabled for the survey: synthetic images carry no
/// instrument dropouts, and on a matched pair the filter's edits are driven
/// by the pair's shared content, stamping near-identical replacements onto
/// both sides and faking correlation in bands the replica does not
/// transmit. Without it the survey reads the replica filter alone.
fn fidelity_sweep() -> &'static SweepReport {
    static SWEEP: OnceLock<SweepReport> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let corpus = generate_corpus(&runtime_geometry(2), 10, 6).unwrap();
        let pairs =
            enumerate_pairs(&corpus.replicas, &corpus.tips, Role::Replica, Role::Tip).unwrap();
        let options = SweepOptions {
            preprocess: PreprocessOptions { despike: false, ..PreprocessOptions::default() },
            fit: FitOptions::default(),
            bootstrap: 300,
            seed: 0,
            blur_variant: true,
        };
        band_sweep(&pairs, &options).unwrap()
    })
}

fn rows_of(report: &SweepReport, group: Truth, blur: bool) -> Vec<SweepRow> {
    let mut rows: Vec<SweepRow> = report
        .rows
        .iter()
        .filter(|r| r.group == group && r.blur == blur)
        .cloned()
        .collect();
    rows.sort_by(|a, b| a.band_lo.partial_cmp(&b.band_lo).unwrap());
    assert_eq!(rows.len(), 10);
    rows
}

#[test]
fn criterion_04_band_sweep_shape() {
    let report = fidelity_sweep();
    let match_rows = rows_of(report, Truth::Match, false);
    let nonmatch_rows = rows_of(report, Truth::NonMatch, false);

    // Monotone non-increasing from the 5-10 1/mm band upward; the band
    // below it is allowed to dip. The slack only forgives rounding between
    // saturated bands, not a real inversion.
    for w in match_rows[1..].windows(2) {
        assert!(
            w[1].mean_r <= w[0].mean_r + 1e-3,
            "match mean rose from {} at [{}, {}) to {} at [{}, {})",
            w[0].mean_r,
            w[0].band_lo,
            w[0].band_hi,
            w[1].mean_r,
            w[1].band_lo,
            w[1].band_hi
        );
    }

    let mid = &match_rows[7];
    assert_eq!((mid.band_lo, mid.band_hi), (67.0, 100.0));
    assert!(
        mid.mean_r > 0.3,
        "match mean {} at [67, 100) fell below the transmission floor",
        mid.mean_r
    );

    // Above 100 1/mm the replica transmits nothing: the two groups must be
    // statistically indistinguishable (overlapping 95% intervals).
    for b in 8..10 {
        let (m, n) = (&match_rows[b], &nonmatch_rows[b]);
        assert!(
            m.ci_lo.max(n.ci_lo) <= m.ci_hi.min(n.ci_hi),
            "groups separable at [{}, {}): match [{}, {}], non-match [{}, {}]",
            m.band_lo,
            m.band_hi,
            m.ci_lo,
            m.ci_hi,
            n.ci_lo,
            n.ci_hi
        );
    }
    println!(
        "[criterion 4] PASS match means fall {:.3} -> {:.3} -> {:.3} across [50,67)/[67,100)/[100,133); groups indistinguishable above 100 1/mm",
        match_rows[6].mean_r, match_rows[7].mean_r, match_rows[8].mean_r
    );
}

#[test]
fn criterion_05_blur_raises_high_band_group_means() {
    let report = fidelity_sweep();
    let aggregate = |group: Truth, blur: bool| -> f64 {
        let rows = rows_of(report, group, blur);
        let high: Vec<&SweepRow> = rows.iter().filter(|r| r.band_lo >= 50.0).collect();
        assert_eq!(high.len(), 4);
        high.iter().map(|r| r.mean_r).sum::<f64>() / high.len() as f64
    };

    let match_plain = aggregate(Truth::Match, false);
    let match_blur = aggregate(Truth::Match, true);
    let nonmatch_plain = aggregate(Truth::NonMatch, false);
    let nonmatch_blur = aggregate(Truth::NonMatch, true);
    assert!(
        match_blur > match_plain,
        "blur lowered the match group mean over bands >= 50: {match_plain} -> {match_blur}"
    );
    assert!(
        nonmatch_blur > nonmatch_plain,
        "blur lowered the non-match group mean over bands >= 50: {nonmatch_plain} -> {nonmatch_blur}"
    );
    println!(
        "[criterion 5] PASS 3x3 blur raises the bands->=50 group means: match {match_plain:.4} -> {match_blur:.4}, non-match {nonmatch_plain:.6} -> {nonmatch_blur:.6}"
    );
}

// ── criterion 6: Parseval equivalence ────────────────────────────────────

#[test]
fn criterion_06_band_correlation_equals_band_filtered_pearson() {
    let band_choices = [
        (10.0, 50.0),
        (30.0, 80.0),
        (50.0, 120.0),
        (80.0, 200.0),
        (120.0, 300.0),
        (15.0, 25.0),
    ];
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + case);
        let mut random_map = |label: &str| {
            let heights: Vec<f64> =
                (0..64 * 64).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            HeightMap::from_vec(label, 64, 64, 1.0, heights).unwrap()
        };
        let a = random_map("a");
        let b = random_map("b");
        let (lo, hi) = band_choices[case as usize % band_choices.len()];

        let spectral = band_correlation(&fft2(&a).unwrap(), &fft2(&b).unwrap(), lo, hi)
            .unwrap()
            .r;

        // Real-space route: band-filter both maps, then correlate pixels.
        // Band-passed images are zero-mean, so no centering term.
        let fa = band_filter(&a, lo, hi).unwrap();
        let fb = band_filter(&b, lo, hi).unwrap();
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for (x, y) in fa.heights().iter().zip(fb.heights()) {
            num += x * y;
            da += x * x;
            db += y * y;
        }
        let pearson = num / (da * db).sqrt();
        worst = worst.max((spectral - pearson).abs());
    }
    assert!(worst <= 1e-6, "worst frequency/real-space disagreement {worst:.3e}");
    println!(
        "[criterion 6] PASS band correlation matches band-filtered Pearson on 100 random 64x64 cases (worst |diff| {worst:.2e})"
    );
}

// ── criterion 7: matrix-t correctness ────────────────────────────────────

#[test]
fn criterion_07a_scalar_case_is_student_t() {
    // With the unit-free kernel |I + sigma^-2 (x-m)^2| the 1x1 case is a
    // Student-t with the same dof and the matched scale sigma/sqrt(nu).
    let m = 0.3;
    let sigma = 1.5;
    let nu = 5.0;
    let params = MatrixTParams::new(vec![m], vec![sigma * sigma], 0.0, 1, nu).unwrap();
    let student = StudentsT::new(m, sigma / nu.sqrt(), nu).unwrap();

    let mut worst = 0.0f64;
    for i in 0..=480 {
        let x = -12.0 + 0.05 * i as f64;
        let ours = params.log_density(&DMatrix::from_element(1, 1, x)).unwrap().exp();
        worst = worst.max((ours - student.pdf(x)).abs());
    }
    assert!(worst <= 1e-10, "worst density disagreement {worst:.3e}");
    println!("[criterion 7a] PASS 1x1 density matches the Student-t (nu=5) within {worst:.2e}");
}

#[test]
fn criterion_07b_em_loglik_never_decreases() {
    let truths = [
        MatrixTParams::new(vec![0.5], vec![1.0], 0.3, 4, 5.0).unwrap(),
        MatrixTParams::new(vec![1.5, 0.8], vec![0.04, 0.01, 0.01, 0.09], 0.5, 6, 5.0).unwrap(),
        MatrixTParams::new(
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.2, 0.1, 0.2, 2.0, 0.3, 0.1, 0.3, 1.5],
            -0.4,
            5,
            5.0,
        )
        .unwrap(),
        MatrixTParams::new(vec![-1.0, 1.0], vec![0.5, -0.1, -0.1, 0.3], 0.7, 2, 5.0).unwrap(),
    ];
    let sizes = [30usize, 12, 10, 60];

    let mut runs = 0usize;
    let mut worst_drop = 0.0f64;
    for (truth, &n) in truths.iter().zip(&sizes) {
        for seed in 0..5u64 {
            let samples = truth.sample(n, 1000 + seed).unwrap();
            let report = fit(&samples, &FitOptions::default()).unwrap();
            for w in report.loglik_trace.windows(2) {
                worst_drop = worst_drop.max(w[0] - w[1]);
                assert!(
                    w[1] >= w[0] - 1e-8,
                    "log-likelihood fell from {} to {} (p={}, q={}, n={n}, seed={seed})",
                    w[0],
                    w[1],
                    truth.p(),
                    truth.q(),
                );
            }
            runs += 1;
        }
    }
    assert_eq!(runs, 20);
    println!(
        "[criterion 7b] PASS log-likelihood non-decreasing across {runs} fits (worst step {worst_drop:.2e})"
    );
}

#[test]
fn criterion_07c_sample_then_fit_recovery() {
    let truth =
        MatrixTParams::new(vec![1.5, 0.8], vec![0.04, 0.01, 0.01, 0.09], 0.5, 6, 5.0).unwrap();
    let samples = truth.sample(500, 424242).unwrap();
    let report = fit(&samples, &FitOptions::default()).unwrap();
    let est = &report.params;

    for (got, want) in est.mean_col().iter().zip(truth.mean_col()) {
        assert!(
            (got - want).abs() <= 0.05,
            "mean column {:?} strayed from {:?}",
            est.mean_col(),
            truth.mean_col()
        );
    }
    assert!(
        (est.ar1_rho() - 0.5).abs() <= 0.1,
        "column correlation {} strayed from 0.5",
        est.ar1_rho()
    );
    let (sest, strue) = (est.sigma(), truth.sigma());
    for i in 0..2 {
        for j in 0..2 {
            let (got, want) = (sest[(i, j)], strue[(i, j)]);
            assert!(
                (got - want).abs() <= 0.3 * want.abs(),
                "row scale {got} at ({i},{j}) strayed more than 30% from {want}"
            );
        }
    }
    println!(
        "[criterion 7c] PASS n=500 recovery: mean ({:.3}, {:.3}), rho {:.3}, row scale within 30%",
        est.mean_col()[0],
        est.mean_col()[1],
        est.ar1_rho()
    );
}

#[test]
fn criterion_07d_scalar_density_integrates_to_one() {
    let params = MatrixTParams::new(vec![0.3], vec![2.25], 0.0, 1, 5.0).unwrap();
    // Simpson's rule over [-150, 150]; the nu=5 tails beyond that carry
    // less than 1e-9 of mass.
    let (a, b, n) = (-150.0, 150.0, 60_000usize);
    let h = (b - a) / n as f64;
    let f = |x: f64| params.log_density(&DMatrix::from_element(1, 1, x)).unwrap().exp();
    let mut integral = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        integral += w * f(a + i as f64 * h);
    }
    integral *= h / 3.0;
    assert!(
        (integral - 1.0).abs() <= 1e-4,
        "density integrates to {integral}, not 1"
    );
    println!("[criterion 7d] PASS scalar density integrates to {integral:.6}");
}

// ── criterion 8: posterior algebra ───────────────────────────────────────

#[test]
fn criterion_08_posterior_algebra() {
    // Equal class densities with an even prior: exactly even odds.
    let (posterior, log_odds) = posterior_from_log_densities(0.5, -3.7, -3.7);
    assert!((posterior - 0.5).abs() <= 1e-12);
    assert!(log_odds.abs() <= 1e-12);

    // Density ratio 9 with an even prior: posterior 0.9.
    let (posterior, _) = posterior_from_log_densities(0.5, 9.0f64.ln() - 2.0, -2.0);
    assert!((posterior - 0.9).abs() <= 1e-12);

    // At an even prior the prior term cancels: the log-odds are exactly the
    // density difference.
    let (_, log_odds) = posterior_from_log_densities(0.5, 1.25, -0.75);
    assert!((log_odds - 2.0).abs() <= 1e-12);
    println!("[criterion 8] PASS posterior algebra exact to 1e-12");
}

// ── criterion 9: preprocessing contracts ─────────────────────────────────

#[test]
fn criterion_09_preprocessing_contracts() {
    // Plane annihilation: tilt removal sends any plane to zero.
    let (w, h) = (48, 32);
    let plane: Vec<f64> = (0..w * h)
        .map(|i| 3.25 + 0.75 * (i % w) as f64 - 1.5 * (i / w) as f64)
        .collect();
    let leveled = HeightMap::from_vec("plane", w, h, 1.0, plane).unwrap().remove_tilt();
    let residual = leveled.heights().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    assert!(residual <= 1e-9, "plane left a residual of {residual:.3e}");

    // Spike replacement: one outlier on a flat field is replaced by its
    // disc mean and nothing else moves. A radius-3 disc holds 29 pixels,
    // so a spike of 29 averages to exactly 1.
    let mut field = vec![0.0; 32 * 32];
    field[16 * 32 + 16] = 29.0;
    let (despiked, replaced) =
        HeightMap::from_vec("spike", 32, 32, 1.0, field).unwrap().remove_spikes(3, 3.0).unwrap();
    assert_eq!(replaced, 1);
    for (i, &v) in despiked.heights().iter().enumerate() {
        if i == 16 * 32 + 16 {
            assert_eq!(v, 1.0, "spike should be replaced by its disc mean");
        } else {
            assert_eq!(v, 0.0, "pixel {i} moved");
        }
    }

    // Mirror involution: flipping twice returns the exact original.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let heights: Vec<f64> = (0..40 * 24).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let map = HeightMap::from_vec("m", 40, 24, 1.0, heights).unwrap();
    for axis in [Axis::Horizontal, Axis::Vertical] {
        assert_eq!(map.mirrored(axis).mirrored(axis).heights(), map.heights());
        assert_ne!(map.mirrored(axis).heights(), map.heights());
    }

    // Tapered-cosine endpoints: exact zero on the border, exact one on the
    // interior plateau, the documented raised cosine in between.
    let ones = HeightMap::from_vec("ones", 64, 64, 1.0, vec![1.0; 64 * 64]).unwrap();
    let tapered = taper_window(&ones, 0.1).unwrap();
    assert_eq!(tapered.at(0, 32), 0.0);
    assert_eq!(tapered.at(32, 0), 0.0);
    assert_eq!(tapered.at(63, 32), 0.0);
    assert_eq!(tapered.at(32, 32), 1.0);
    let t = 0.1 * 63.0;
    let expected = 0.5 * (1.0 - (PI * 1.0 / t).cos());
    assert!((tapered.at(1, 32) - expected).abs() <= 1e-9);

    println!(
        "[criterion 9] PASS plane annihilation, spike oracle, mirror involution, taper endpoints"
    );
}
