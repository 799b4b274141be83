use nilflow::algebra::ActionParams;
use nilflow::cohomology::{self, Cochain1, Witnesses};
use nilflow::nilrep::{nil_sobolev_norm, random_nil_function, SupportBounds};
use nilflow::rigidity::{self, FamilyCoordinates};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const B: SupportBounds = SupportBounds { k: 4, n: 3, m: 12 };

fn params(mu: f64, beta: f64) -> ActionParams {
    let mut p = ActionParams::heisenberg_golden();
    p.mu = mu;
    p.beta = vec![beta];
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn coboundaries_are_cocycles(seed in any::<u64>(), mu in -2.0f64..2.0, beta in 0.2f64..2.0) {
        let p = params(mu, beta);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_nil_function(&mut rng, &B, 2.0, false);
        let w = cohomology::delta0(&p, &h);
        let scale = w.norm(1.0).max(1.0);
        prop_assert!(nil_sobolev_norm(&cohomology::delta1(&p, &w), 0.0) <= 1e-12 * scale);
    }

    #[test]
    fn delta0_inverse_recovers_primitive(seed in any::<u64>()) {
        let p = params(0.0, 1.0);
        let w = Witnesses::fit(&p, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_nil_function(&mut rng, &B, 2.0, true);
        let back = cohomology::delta0_star(&p, &cohomology::delta0(&p, &h), &w, 1e-9).unwrap();
        prop_assert!(nil_sobolev_norm(&back.h.sub(&h), 0.0) <= 1e-10 * nil_sobolev_norm(&h, 0.0));
    }

    #[test]
    fn splitting_reconstructs(seed in any::<u64>(), mu in -1.0f64..1.0) {
        let p = params(mu, 1.0);
        let w = Witnesses::fit(&p, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let om = Cochain1::new(
            random_nil_function(&mut rng, &B, 4.0, false),
            random_nil_function(&mut rng, &B, 4.0, false),
        );
        let s = cohomology::delta1_star_split(&p, &om, &w).unwrap();
        prop_assert!(s.reconstruction_error(&p, &om) <= 1e-10 * om.norm(0.0));
    }

    #[test]
    fn projection_inverts_section(
        mu in -3.0f64..3.0,
        mu1 in -2.0f64..2.0,
        a1 in -2.0f64..2.0,
        a2 in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let p = params(mu, 1.0);
        let c = FamilyCoordinates::new(mu1, [a1, a2], b);
        let back = rigidity::project_p(&p, &rigidity::section_s(&p, &c, 1)).unwrap();
        prop_assert!(back.max_abs_diff(&c) <= 1e-12);
    }
}
