use proptest::prelude::*;

use tba::agent::{argmax, select_action, Architecture, QNetwork};
use tba::codec::dct::{dct2_8x8, idct2_8x8};
use tba::codec::encode_ctu;
use tba::codec::LumaFrame;
use tba::env::{make_state, reward, Action, FrameContext, RewardParams, GLOBAL_DIM, LOCAL_LEN};
use tba::eval::relative_saving;
use tba::importance::{ImportanceMap, InstanceMap, TaskMaps};

fn ctx_from(pixels: Vec<u8>, levels: Vec<u8>) -> FrameContext {
    let frame = LumaFrame::from_raw("p", 64, 64, pixels).unwrap();
    let maps = TaskMaps {
        importance: ImportanceMap::from_levels(64, 64, levels),
        instances: InstanceMap::background(64, 64),
    };
    FrameContext::new(frame, maps).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dct_round_trip(v in prop::collection::vec(-300.0f64..300.0, 64)) {
        let block: [f64; 64] = v.try_into().unwrap();
        let back = idct2_8x8(&dct2_8x8(&block).unwrap()).unwrap();
        for (a, b) in block.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn coarser_step_never_costs_more(seed in any::<u64>(), qp in 22u8..=45) {
        let mut x = seed;
        let ctu: Vec<u8> = (0..4096).map(|_| { x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (x >> 56) as u8 }).collect();
        let a = encode_ctu(&ctu, qp).unwrap();
        let b = encode_ctu(&ctu, qp + 6).unwrap();
        prop_assert!(b.bits <= a.bits);
    }

    #[test]
    fn anchor_reward_is_zero(bpp in 0.0f64..8.0, wd in 0.0f64..1e4, lambda in 1e-3f64..10.0, scale in 1e-3f64..100.0) {
        let p = RewardParams::new(lambda, scale).unwrap();
        prop_assert_eq!(reward(bpp, bpp, wd, wd, &p), 0.0);
    }

    #[test]
    fn relative_saving_monotone(p in 0.0f64..0.99, b in 0.0f64..0.98, d in 0.001f64..0.01) {
        let base = relative_saving(p, b).unwrap();
        prop_assert!(relative_saving(p + d, b).unwrap() > base);
        if p < 1.0 {
            prop_assert!(relative_saving(p, b + d).unwrap() <= base);
        }
    }

    #[test]
    fn state_is_pure(pix in prop::collection::vec(any::<u8>(), 4096), lv in any::<u8>()) {
        let ctx = ctx_from(pix, vec![lv; 4096]);
        let a = make_state(&ctx, 0, &[]).unwrap();
        let b = make_state(&ctx, 0, &[]).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.local.len(), LOCAL_LEN);
        prop_assert!(a.local.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(a.global.iter().all(|v| v.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn output_scaling_keeps_greedy_action(seed in any::<u64>(), k in 0.1f64..10.0, g in prop::collection::vec(-1.0f64..1.0, GLOBAL_DIM)) {
        let mut net = QNetwork::new(Architecture::default(), seed);
        let ctx = ctx_from((0..4096).map(|i| (i * 7 % 251) as u8).collect(), vec![128; 4096]);
        let mut state = make_state(&ctx, 0, &[]).unwrap();
        state.global.copy_from_slice(&g);
        let before = net.forward(&state).unwrap();
        let last = *net.layers().last().unwrap();
        for w in &mut net.params_mut()[last.weight_offset..last.bias_offset + last.bias_len] {
            *w *= k;
        }
        let after = net.forward(&state).unwrap();
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a * k - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        prop_assert_eq!(select_action(&after, 0.0, &mut rng), Action::from_index(argmax(&before)).unwrap());
    }
}

#[test]
fn action_bijection() {
    for qp in 22..=51u8 {
        assert_eq!(Action::from_qp(qp).unwrap().qp(), qp);
        let a = Action::from_qp(qp).unwrap();
        assert_eq!(Action::from_index(a.index()).unwrap(), a);
    }
    assert!(Action::from_qp(21).is_err());
    assert!(Action::from_index(30).is_err());
}
