//! Property tests over the scheduler and the LQ machinery.

mod support;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mesch::riccati::{AffineLq, Seq};
use mesch::scheduler::{gap_flag, schedule, GapParams, RobotSlot, Trigger};
use support::{max_abs_diff, spd, uniform_matrix, uniform_vector, DenseLq};

fn params(margin: f64, t_ch: f64) -> GapParams {
    GapParams {
        t_ch,
        t_delta: 15.0,
        t_l: 6.0,
        t_c: 12.0,
        cadence_margin: margin,
    }
}

/// Flight-free model of the scheduling loop: constant-rate robots, decisions
/// every `t_e`. A robot told to land finishes its previously committed plan,
/// so it touches down `T_C + T_L` after its last commit.
struct Fleet {
    e: Vec<f64>,
    rate: Vec<f64>,
    /// Touchdown time of a robot that has been told to land.
    landing_at: Vec<Option<f64>>,
    /// End of charging for a robot on the pad.
    charged_at: Vec<Option<f64>>,
    last_commit: Vec<Option<f64>>,
}

const E_MIN: f64 = 10.0;
const E_MAX: f64 = 100.0;

/// Returns touchdown times and the SoC at each touchdown.
fn simulate(mut f: Fleet, p: &GapParams, t_e: f64, horizon: f64) -> (Vec<f64>, Vec<f64>, bool) {
    let mut touchdowns = Vec::new();
    let mut soc_at_touchdown = Vec::new();
    let mut first_trigger = false;
    let steps = (horizon / t_e) as usize;
    let back = p.t_c + p.t_l;
    for j in 0..steps {
        let t = j as f64 * t_e;
        for i in 0..f.e.len() {
            if f.charged_at[i].is_some_and(|c| c <= t + 1e-9) {
                f.charged_at[i] = None;
                f.e[i] = E_MAX;
            }
        }
        let slots: Vec<RobotSlot> = (0..f.e.len())
            .filter(|&i| f.landing_at[i].is_none() && f.charged_at[i].is_none())
            .map(|i| RobotSlot {
                id: i,
                t_f: (f.e[i] - E_MIN) / f.rate[i],
                soc_stream: (0..=(back * 2.0) as usize).map(|k| f.e[i] - f.rate[i] * k as f64 * 0.5).collect(),
                e_min: E_MIN,
                e_res: 0.0,
            })
            .collect();
        let d = schedule(&slots, p);
        if j == 0 && d.trigger != Trigger::None {
            first_trigger = true;
        }
        for dec in &d.decisions {
            if dec.land {
                let since = f.last_commit[dec.id].expect("landing robot has a committed plan");
                f.landing_at[dec.id] = Some(since + back);
            } else {
                f.last_commit[dec.id] = Some(t);
            }
        }
        // Advance one decision period.
        for i in 0..f.e.len() {
            if f.charged_at[i].is_some() {
                continue;
            }
            match f.landing_at[i] {
                Some(td) if td <= t + t_e + 1e-9 => {
                    f.e[i] -= f.rate[i] * (td - t);
                    touchdowns.push(td);
                    soc_at_touchdown.push(f.e[i]);
                    f.landing_at[i] = None;
                    f.charged_at[i] = Some(td + p.t_ch);
                    f.last_commit[i] = None;
                }
                _ => f.e[i] -= f.rate[i] * t_e,
            }
        }
    }
    (touchdowns, soc_at_touchdown, first_trigger)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Recursive feasibility of the decision rule: starting from spacings
    /// that pass every gap flag, returns stay apart and no robot lands
    /// below the floor.
    #[test]
    fn feasible_start_keeps_gaps_and_floor(
        rates in prop::collection::vec(0.5f64..0.8, 1..6),
        spacing in prop::collection::vec(0.5f64..10.0, 6),
        first in 25.0f64..40.0,
        t_ch in prop::sample::select(vec![0.0, 5.0, 10.0]),
    ) {
        let t_e = 2.0;
        let p = params(t_e, t_ch);
        let n = rates.len();
        let mut t_f = vec![first];
        for k in 1..n {
            let prev = t_f[k - 1];
            t_f.push(prev + p.min_gap() + p.cadence_margin + spacing[k]);
        }
        let e: Vec<f64> = t_f.iter().zip(&rates).map(|(t, r)| E_MIN + t * r).collect();
        prop_assume!(e.iter().all(|&v| v <= E_MAX));
        prop_assume!((1..n).all(|k| gap_flag(t_f[k], k, &p)));
        // Steady state needs room for everyone inside one battery period.
        let period = (E_MAX - E_MIN) / rates.iter().cloned().fold(0.0, f64::max);
        prop_assume!(n as f64 * (p.min_gap() + 2.0 * t_e) < period);

        let fleet = Fleet { e, rate: rates, landing_at: vec![None; n], charged_at: vec![None; n], last_commit: vec![None; n] };
        let (mut td, soc, first_trigger) = simulate(fleet, &p, t_e, 900.0);
        prop_assert!(!first_trigger);
        td.sort_by(f64::total_cmp);
        for w in td.windows(2) {
            prop_assert!(w[1] - w[0] > p.min_gap(), "returns at {} and {}", w[0], w[1]);
        }
        for s in soc {
            prop_assert!(s >= E_MIN - 1e-9, "touched down at {s}");
        }
    }

    /// Decisions do not depend on the order robots are listed in.
    #[test]
    fn schedule_is_order_invariant(
        t_fs in prop::collection::vec(0.0f64..200.0, 1..10),
        lows in prop::collection::vec(0.0f64..30.0, 10),
        seed in any::<u64>(),
    ) {
        let p = params(2.0, 0.0);
        let slots: Vec<RobotSlot> = t_fs.iter().enumerate().map(|(i, &t)| RobotSlot {
            id: i, t_f: t, soc_stream: vec![50.0, lows[i]], e_min: 10.0, e_res: 1.0,
        }).collect();
        let mut shuffled = slots.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng);
        prop_assert_eq!(schedule(&slots, &p), schedule(&shuffled, &p));
    }

    /// Backward Riccati pass agrees with a dense KKT solve.
    #[test]
    fn riccati_matches_kkt(seed in any::<u64>(), nz in 1usize..5, nv in 1usize..3, states in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = states - 1;
        let a: Vec<_> = (0..steps).map(|_| uniform_matrix(&mut rng, nz, nz, 1.0)).collect();
        let b: Vec<_> = (0..steps).map(|_| uniform_matrix(&mut rng, nz, nv, 1.0)).collect();
        let q: Vec<_> = (0..states).map(|_| spd(&mut rng, nz, 0.1)).collect();
        let r: Vec<_> = (0..steps).map(|_| spd(&mut rng, nv, 0.1)).collect();
        let ql: Vec<_> = (0..states).map(|_| uniform_vector(&mut rng, nz, 1.0)).collect();
        let rl: Vec<_> = (0..steps).map(|_| uniform_vector(&mut rng, nv, 1.0)).collect();
        let z0 = uniform_vector(&mut rng, nz, 1.0);
        let lq = AffineLq {
            a: Seq::Each(&a),
            b: Seq::Each(&b),
            q: Seq::Each(&q[..steps]),
            r: Seq::Each(&r),
            q_terminal: &q[steps],
            q_lin: Some(&ql),
            r_lin: Some(&rl),
        };
        let policy = lq.solve(states).unwrap();
        let (zs, vs) = lq.rollout(&policy, &z0);
        let (zk, vk) = DenseLq { a: a.clone(), b: b.clone(), q: q.clone(), r: r.clone(), q_lin: ql.clone(), r_lin: rl.clone(), z0 }.solve();
        prop_assert!(max_abs_diff(&zs, &zk) < 1e-8);
        prop_assert!(max_abs_diff(&vs, &vk) < 1e-8);
    }
}

#[test]
fn kkt_oracle_solves_a_hand_problem() {
    // min z1^2 + v0^2, z1 = z0 + v0, z0 = 1  =>  v0 = -1/2, z1 = 1/2.
    let one = DMatrix::identity(1, 1);
    let (zs, vs) = DenseLq {
        a: vec![one.clone()],
        b: vec![one.clone()],
        q: vec![one.clone(), one.clone()],
        r: vec![one],
        q_lin: vec![DVector::zeros(1); 2],
        r_lin: vec![DVector::zeros(1)],
        z0: DVector::from_element(1, 1.0),
    }
    .solve();
    assert!((vs[0][0] + 0.5).abs() < 1e-14);
    assert!((zs[1][0] - 0.5).abs() < 1e-14);
}
