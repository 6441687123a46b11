use blowup_core::coeffs::Profile;
use blowup_core::experiment::Scheme;
use blowup_lab::config::{InitialData, RunConfig, Schedule};
use proptest::prelude::*;

fn profile() -> impl Strategy<Value = Option<Profile>> {
    prop_oneof![
        Just(None),
        (-2.0f64..2.0).prop_map(|a| Some(Profile::OscillatoryPotential { amplitude: a })),
        (0.1f64..3.0, proptest::option::of(1.0f64..10.0)).prop_map(|(c, cap)| Some(Profile::Quadratic { coeff: c, cap })),
        proptest::collection::vec(-1.0f64..1.0, 1..4).prop_map(|c| Some(Profile::Polynomial { coeffs: c })),
    ]
}

fn config() -> impl Strategy<Value = RunConfig> {
    (
        (1usize..3, 5.0f64..40.0, 3u32..12),
        ("[a-z_]{1,10}", -1.0f64..1.0, profile(), profile()),
        (any::<bool>(), 1e-6f64..1e-2, -2.0f64..-0.1, -0.09f64..-0.01),
        (4u32..20, proptest::option::of(1.0f64..1.5), 0.01f64..0.5, proptest::option::of(0.0f64..0.1)),
        (-0.1f64..-0.01, -1.0f64..-0.2, any::<bool>(), proptest::collection::vec(-0.1f64..-0.001, 0..5)),
        ("[a-z/]{1,12}", 1usize..100, any::<bool>()),
    )
        .prop_map(|(g, c, e, m, x, o)| {
            let mut cfg = RunConfig::default();
            cfg.grid.dim = g.0;
            cfg.grid.half_width = g.1;
            cfg.grid.points = 1 << g.2;
            cfg.coefficients.name = c.0;
            cfg.coefficients.potential_scale = c.1;
            cfg.coefficients.potential = c.2;
            cfg.coefficients.nonlinearity = c.3;
            cfg.evolve.initial = if e.0 { InitialData::ExactS } else { InitialData::GroundState };
            cfg.evolve.dt0 = e.1;
            cfg.evolve.t_span = [e.2, e.3];
            cfg.modulation.k = m.0;
            cfg.modulation.m_exp = m.1;
            cfg.modulation.delta = m.2;
            cfg.modulation.eps2 = m.3;
            cfg.experiment.t1 = x.0;
            cfg.experiment.t0 = x.1;
            cfg.experiment.scheme = if x.2 { Scheme::Strang } else { Scheme::TripleJump };
            cfg.experiment.t_n = if x.3.len() == 4 {
                Schedule::Geometric {
                    first: x.3[0],
                    ratio: 0.7,
                    count: 5,
                }
            } else {
                Schedule::List(x.3)
            };
            cfg.output.directory = o.0;
            cfg.output.cadence = o.1;
            cfg.output.plots = o.2;
            cfg
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn serialize_then_parse_is_identity(cfg in config()) {
        let text = cfg.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        // and serializing again is a fixed point
        prop_assert_eq!(back.to_toml(), text);
    }
}

#[test]
fn documented_example_round_trips() {
    let doc = r#"
[grid]
dim = 1
half_width = 20.0
points = 1024

[coefficients]
name = "oscillatory_v"
potential_scale = 0.1

[evolve]
initial = "exact_s"
t_span = [-1.0, -0.25]
dt0 = 1e-4

[modulation]
k = 8
delta = 0.2
ortho_tol = 1e-10

[experiment]
t1 = -0.02
t0 = -0.1
t_n = { first = -0.1, ratio = 0.7, count = 5 }
frame_step = 1e-3
scheme = "triple_jump"

[output]
directory = "out"
cadence = 5
plots = true
"#;
    let cfg = RunConfig::from_toml(doc).unwrap();
    let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(cfg.coefficients.potential_scale, 0.1);
    assert_eq!(cfg.experiment.t_n, Schedule::Geometric { first: -0.1, ratio: 0.7, count: 5 });
}
