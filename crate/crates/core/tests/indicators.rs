use lstm_ensemble::indicators::{
    ema_series, macd_series, rsi_series, EmaSeed, EmaState, IndicatorParams, MacdState, RsiState,
};
use lstm_ensemble::nn::seeded_rng;
use proptest::prelude::*;
use rand::Rng;

/// EMA as an explicit weighted sum instead of a recurrence:
/// `ema_t = Σ_{k<t} α(1−α)^k v_{t−k} + (1−α)^t v_0`.
fn ema_direct(v: &[f64], period: usize) -> Vec<f64> {
    let a = 2.0 / (period as f64 + 1.0);
    (0..v.len())
        .map(|t| {
            let mut s = (1.0 - a).powi(t as i32) * v[0];
            for k in 0..t {
                s += a * (1.0 - a).powi(k as i32) * v[t - k];
            }
            s
        })
        .collect()
}

/// Wilder average written out: the simple mean of the first `p` terms,
/// decayed by `(1 − 1/p)` per later step, plus each later term weighted `1/p`.
fn wilder_direct(x: &[f64], p: usize, t: usize) -> f64 {
    let pf = p as f64;
    let d = 1.0 - 1.0 / pf;
    let seed: f64 = x[..p].iter().sum::<f64>() / pf;
    let mut s = d.powi((t + 1 - p) as i32) * seed;
    for (j, &xj) in x.iter().enumerate().take(t + 1).skip(p) {
        s += d.powi((t - j) as i32) * xj / pf;
    }
    s
}

fn rsi_direct(close: &[f64], p: usize) -> Vec<Option<f64>> {
    let gains: Vec<f64> = (1..close.len()).map(|i| (close[i] - close[i - 1]).max(0.0)).collect();
    let losses: Vec<f64> = (1..close.len()).map(|i| (close[i - 1] - close[i]).max(0.0)).collect();
    (0..close.len())
        .map(|t| {
            if t < p {
                return None;
            }
            let g = wilder_direct(&gains, p, t - 1);
            let l = wilder_direct(&losses, p, t - 1);
            Some(if l == 0.0 {
                if g == 0.0 {
                    50.0
                } else {
                    100.0
                }
            } else {
                100.0 * g / (g + l)
            })
        })
        .collect()
}

fn random_walk(rng: &mut lstm_ensemble::nn::Rng64, n: usize) -> Vec<f64> {
    let mut p = rng.random_range(20.0..200.0);
    (0..n)
        .map(|_| {
            p = (p + rng.random_range(-2.0..2.0f64)).max(1.0);
            p
        })
        .collect()
}

#[test]
fn macd_signal_rsi_match_direct_sums_on_random_walks() {
    let params = IndicatorParams::default();
    let mut rng = seeded_rng(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(40..160);
        let close = random_walk(&mut rng, n);
        let fast = ema_direct(&close, 12);
        let slow = ema_direct(&close, 26);
        let macd: Vec<f64> = fast.iter().zip(&slow).map(|(f, s)| f - s).collect();
        let signal = ema_direct(&macd, 9);
        let rsi = rsi_direct(&close, 14);

        let got = macd_series(&close, &params).unwrap();
        let got_rsi = rsi_series(&close, 14).unwrap();
        for t in 0..n {
            let m = got[t].expect("first-value seeding defines MACD everywhere");
            worst = worst.max((m.macd - macd[t]).abs()).max((m.signal - signal[t]).abs());
            match (got_rsi[t], rsi[t]) {
                (Some(a), Some(b)) => {
                    worst = worst.max((a - b).abs());
                    assert!((0.0..=100.0).contains(&a));
                }
                (None, None) => {}
                other => panic!("definedness differs at {t}: {other:?}"),
            }
        }
    }
    assert!(worst < 1e-10, "max abs deviation {worst:e}");
}

#[test]
fn linear_ramp_has_closed_form_macd() {
    // For v_t = t and a first-value seed, ema_t = t − (1−α)/α · (1 − (1−α)^t).
    let close: Vec<f64> = (1..=60).map(|t| t as f64).collect();
    let lag = |p: usize, t: usize| {
        let a = 2.0 / (p as f64 + 1.0);
        (1.0 - a) / a * (1.0 - (1.0 - a).powi(t as i32))
    };
    let got = macd_series(&close, &IndicatorParams::default()).unwrap();
    let fast = ema_direct(&close, 12);
    let slow = ema_direct(&close, 26);
    for (t, m) in got.iter().enumerate() {
        let m = m.unwrap().macd;
        assert!((m - (lag(26, t) - lag(12, t))).abs() < 1e-12, "t={t}");
        assert!((m - (fast[t] - slow[t])).abs() < 1e-12, "t={t}");
    }
    let rsi = rsi_series(&close, 14).unwrap();
    assert!(rsi[..14].iter().all(Option::is_none));
    assert!(rsi[14..].iter().all(|r| *r == Some(100.0)));
}

#[test]
fn twenty_point_walk_rsi() {
    let close = [
        44.34, 44.09, 44.15, 43.61, 44.33, 44.83, 45.10, 45.42, 45.84, 46.08, 45.89, 46.03, 45.61, 46.28, 46.28, 46.00,
        46.03, 46.41, 46.22, 45.64,
    ];
    let oracle = rsi_direct(&close, 14);
    let got = rsi_series(&close, 14).unwrap();
    assert_eq!(got.iter().flatten().count(), 6);
    for (a, b) in got.iter().zip(&oracle) {
        match (a, b) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-10),
            (None, None) => {}
            other => panic!("{other:?}"),
        }
    }
}

#[test]
fn streaming_equals_batch() {
    let params = IndicatorParams::default();
    let mut rng = seeded_rng(5);
    for _ in 0..50 {
        let close = random_walk(&mut rng, 120);
        let batch = macd_series(&close, &params).unwrap();
        let batch_rsi = rsi_series(&close, 14).unwrap();
        let batch_sma = ema_series(&close, 10, EmaSeed::Sma).unwrap();
        let mut m = MacdState::new(&params).unwrap();
        let mut r = RsiState::new(14).unwrap();
        let mut e = EmaState::new(10, EmaSeed::Sma).unwrap();
        for (t, &c) in close.iter().enumerate() {
            assert_eq!(m.step(c).unwrap(), batch[t]);
            assert_eq!(r.step(c).unwrap(), batch_rsi[t]);
            assert_eq!(e.step(c).unwrap(), batch_sma[t]);
        }
    }
}

proptest! {
    #[test]
    fn rsi_bounded(close in prop::collection::vec(1.0f64..1000.0, 16..80)) {
        for r in rsi_series(&close, 14).unwrap().into_iter().flatten() {
            prop_assert!((0.0..=100.0).contains(&r));
        }
    }

    #[test]
    fn rsi_ignores_level_shift(
        close in prop::collection::vec(1.0f64..100.0, 16..60),
        shift in -0.5f64..100.0,
    ) {
        let a = rsi_series(&close, 14).unwrap();
        let shifted: Vec<f64> = close.iter().map(|c| c + shift).collect();
        let b = rsi_series(&shifted, 14).unwrap();
        for (x, y) in a.iter().zip(&b) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-6),
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }
    }

    #[test]
    fn ema_stays_within_input_range(
        v in prop::collection::vec(-1e3f64..1e3, 1..80),
        period in 1usize..30,
    ) {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for e in ema_series(&v, period, EmaSeed::First).unwrap().into_iter().flatten() {
            prop_assert!(e >= lo - 1e-9 && e <= hi + 1e-9);
        }
    }
}
