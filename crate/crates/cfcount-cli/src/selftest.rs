//! Quick cross-module invariant suite behind `cfcount selftest`: one line
//! per check, orchestrating the same invariants the test suite pins down,
//! at reduced sizes so the whole run stays under a few seconds.

use cfcount::cf_dynamics::{nli_probe, Alphabet, CylinderId, MarkovSystem, NLI_DEFAULT_FD_STEP};
use cfcount::congruence::{FiniteGroup, NewSubspaceProjector};
use cfcount::counting::{self, BallQuery, TestFn};
use cfcount::mat2z::{self, pair_generator};
use cfcount::mixing;
use cfcount::thermo;
use cfcount::twisted::{self, TwistedOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(name: &str, ok: bool) -> u32 {
    if ok {
        println!("ok   {}", name);
        0
    } else {
        println!("FAIL {}", name);
        1
    }
}

pub fn run_all() -> u32 {
    let mut failures = 0;
    let alphabet = Alphabet::new(vec![1, 2]).unwrap();
    let sys = MarkovSystem::build(alphabet.clone()).unwrap();

    // exact matrix layer
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut trace_ok = true;
    for _ in 0..2000 {
        let mut g = mat2z::IDENTITY;
        let mut h = mat2z::IDENTITY;
        for _ in 0..rng.gen_range(1..=8) {
            g = mat2z::multiply(&g, &pair_generator(rng.gen_range(1..=2), rng.gen_range(1..=2))).unwrap();
        }
        for _ in 0..rng.gen_range(1..=8) {
            h = mat2z::multiply(&h, &pair_generator(rng.gen_range(1..=2), rng.gen_range(1..=2))).unwrap();
        }
        if mat2z::trace_identity_residual(&g, &h).unwrap() != 0 {
            trace_ok = false;
        }
    }
    failures += check("trace identity residual ≡ 0 (2000 random pairs)", trace_ok);

    let mut disp_ok = true;
    for _ in 0..200 {
        let mut g = mat2z::IDENTITY;
        for _ in 0..rng.gen_range(1..=8) {
            g = mat2z::multiply(&g, &pair_generator(rng.gen_range(1..=2), rng.gen_range(1..=2))).unwrap();
        }
        let d = mat2z::displacement(&g).unwrap();
        let (re, im) = g.moebius_complex(0.0, 1.0);
        let oracle = 1.0 + (re * re + (im - 1.0) * (im - 1.0)) / (2.0 * im);
        if (2.0 * d.cosh() - 2.0 * oracle).abs() > 1e-9 * 2.0 * oracle {
            disp_ok = false;
        }
    }
    failures += check("norm² = 2cosh d(i, γi) against the Möbius oracle", disp_ok);

    // branch system round trip
    let mut rt_ok = true;
    let (lo, hi) = sys.hull_f64();
    for _ in 0..500 {
        let c = CylinderId(rng.gen_range(0..4));
        let x = lo + rng.gen::<f64>() * (hi - lo);
        let y = sys.inverse_branch(c, x);
        match sys.map_apply(y) {
            Ok((back, id)) if id == c && (back - x).abs() <= 1e-13 => {}
            _ => rt_ok = false,
        }
    }
    failures += check("inverse branch / map round trip", rt_ok);

    // dimension and renewal
    let gibbs = thermo::dimension(&sys, 16, 1e-10).unwrap();
    failures += check(
        "dimension of the {1,2} system matches the reference value",
        (gibbs.delta - 0.5312805062772051).abs() < 1e-8,
    );
    let x = counting::default_anchor();
    let mut renewal_ok = true;
    for _ in 0..20 {
        let a = rng.gen_range(0.0..8.0);
        let lhs = counting::renewal_count(&sys, a, x, &TestFn::One).unwrap();
        let mut rhs = 1.0;
        for c in 0..4 {
            let id = CylinderId(c);
            rhs += counting::renewal_count(
                &sys,
                a - sys.tau_step(id, x),
                sys.inverse_branch(id, x),
                &TestFn::One,
            )
            .unwrap();
        }
        if (lhs - rhs).abs() > 1e-12 * lhs.max(1.0) {
            renewal_ok = false;
        }
    }
    failures += check("renewal equation exact on random thresholds", renewal_ok);

    let ball = counting::enumerate_ball(&BallQuery::new(sys.clone(), 7.0f64.sqrt() + 1e-9), None).unwrap();
    failures += check("smallest ball counts {1, pair(1,1)}", ball.total_count == 2);

    // congruence layer
    let group = FiniteGroup::enumerate(6).unwrap();
    let proj = NewSubspaceProjector::new(&group);
    let ranks: i64 = [1u32, 2, 3, 6].iter().map(|&d| proj.component_rank(d).unwrap()).sum();
    failures += check("divisor ranks sum to |SL₂(ℤ/6)| = 144", ranks == 144 && group.order() == 144);

    // twisted operator
    let model = thermo::SpectralModel::new(sys.clone(), 8).unwrap();
    let g5 = FiniteGroup::enumerate(5).unwrap();
    let op = TwistedOperator::new(&model, &g5, gibbs.delta, 0.0).unwrap();
    let radius = twisted::spectral_radius_new(&op, 400, 0).unwrap();
    failures += check("twisted radius at q = 5 below one", radius.radius < 1.0);

    let g1 = FiniteGroup::enumerate(1).unwrap();
    let op1 = TwistedOperator::new(&model, &g1, gibbs.delta, 0.0).unwrap();
    let ones = vec![num_one(); op1.len()];
    let fixed = op1
        .matvec(&ones)
        .unwrap()
        .iter()
        .all(|z| (z.re - 1.0).abs() < 1e-10 && z.im.abs() < 1e-12);
    failures += check("normalized operator fixes constants", fixed);

    // mixing
    let g7 = FiniteGroup::enumerate(7).unwrap();
    let w = mixing::walk(&g7, &alphabet, 6).unwrap();
    failures += check("walk mass conserved exactly", w.total_mass() == 4u128.pow(6));
    let gap = mixing::spectral_gap(&g7, &alphabet).unwrap();
    failures += check("one-step spectral gap below one at p = 7", gap < 1.0);

    // zaremba
    let set = cfcount::zaremba::denominator_set(&alphabet, 5);
    let all5 = (1..=5).all(|d| set.contains(d));
    failures += check("denominator set of {1,2} covers [1,5]", all5);
    let set2 = cfcount::zaremba::denominator_set(&Alphabet::new(vec![2]).unwrap(), 12);
    let vals: Vec<u64> = (1..=12).filter(|&d| set2.contains(d)).collect();
    failures += check("denominator set of {2} is {1,2,5,12}", vals == vec![1, 2, 5, 12]);

    // non-local integrability probe
    let nli = nli_probe(&sys, 200, 0, NLI_DEFAULT_FD_STEP).unwrap();
    failures += check("temporal-distance derivative bounded away from zero", nli.max_abs_du > 1e-3);

    failures
}

fn num_one() -> num::complex::Complex64 {
    num::complex::Complex64::new(1.0, 0.0)
}

use cfcount::num;
