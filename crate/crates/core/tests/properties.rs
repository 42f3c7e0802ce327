use ndarray::Array3;
use proptest::prelude::*;

use pqg::background::{build_background, BackgroundConfig};
use pqg::config::RunConfig;
use pqg::frame::Frame;
use pqg::inversion::{Inverter, LidConditions};
use pqg::microphysics::{saturation_adjust, source_terms, MicrophysicsParams, MoistureCell};
use pqg::spectral::Grid;
use pqg::thermo::ThermoParams;

fn inverter() -> Inverter {
    let tp = ThermoParams::default();
    let grid = Grid::new(8, 8, 4, 2.0e6, 2.0e6, 1.0e4);
    let bg = build_background(&BackgroundConfig::default(), grid.nz, grid.h, &tp).unwrap();
    Inverter::new(grid, bg, &tp, LidConditions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjustment_is_idempotent(q_t in -1.0f64..3.0, q_r in 0.0f64..1.0, q_vs in -1.0f64..2.0) {
        let a = saturation_adjust(q_t, q_r, q_vs);
        let b = saturation_adjust(a.q_v + a.q_c + q_r, q_r, q_vs);
        prop_assert!((a.q_v - b.q_v).abs() <= 4.0 * f64::EPSILON * q_t.abs().max(1.0));
        prop_assert!((a.q_c - b.q_c).abs() <= 4.0 * f64::EPSILON * q_t.abs().max(1.0));
        prop_assert!(a.q_c >= 0.0);
    }

    #[test]
    fn sources_conserve_water(q_v in 0.0f64..2.0, q_c in 0.0f64..1.0, q_r in 0.0f64..1.0, q_vs in 0.0f64..2.0) {
        let s = source_terms(&MoistureCell { q_v, q_c, q_r, q_vs }, &MicrophysicsParams::default());
        let dv = s.ev - s.cd;
        let dc = s.cd - s.ac - s.cr;
        let dr = s.ac + s.cr - s.ev;
        prop_assert!((dv + dc + dr).abs() <= 1e-12 * (s.ev.abs() + s.cd.abs() + s.ac + s.cr + 1e-300));
        prop_assert!(s.ev >= 0.0 && s.ac >= 0.0 && s.cr >= 0.0);
    }

    #[test]
    fn frame_encoding_is_lossless(values in proptest::collection::vec(any::<f64>(), 2 * 3 * 4), time in any::<f64>()) {
        let frame = Frame { time, fields: vec![("x".into(), Array3::from_shape_vec((2, 3, 4), values).unwrap())] };
        let mut buf = Vec::new();
        frame.encode(&mut buf).unwrap();
        let back = Frame::decode(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.time.to_bits(), time.to_bits());
        prop_assert!(back.fields[0].1.iter().zip(frame.fields[0].1.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn config_round_trip(nx_pow in 2u32..6, nz in 4usize..12, dt in 10.0f64..1000.0, steps in 0usize..20, seed in any::<u64>()) {
        let text = format!(
            "[grid]\nnx = {n}\nny = {n}\nnz = {nz}\n[dynamics]\ndt = {dt:?}\nt_end = {:?}\nseed = {seed}\n",
            dt * steps as f64,
            n = 1usize << nx_pow
        );
        let cfg = RunConfig::parse_str(&text, None).unwrap();
        let again = RunConfig::parse_str(&cfg.to_toml().unwrap(), None).unwrap();
        prop_assert_eq!(cfg, again);
    }

    #[test]
    fn dry_inversion_inverts_forward_operator(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let inv = inverter();
        let g = *inv.grid();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut phi = Array3::from_shape_fn(g.shape(), |_| rng.random_range(-1.0..1.0));
        phi = inv.spectral().truncate(&phi);
        let mean = phi.mean().unwrap();
        phi.mapv_inplace(|v| v - mean);
        let back = inv.invert_dry(&inv.apply_dry(&phi)).unwrap();
        let mean_back = back.mean().unwrap();
        let scale = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = phi.iter().zip(back.iter()).fold(0.0f64, |m, (a, b)| m.max((a - (b - mean_back)).abs()));
        prop_assert!(err < 1e-9 * scale, "{}", err);
    }
}
