//! Render a phase portrait to SVG: demonstrations, model rollouts from the
//! demonstrated starts, a quiver of the learned vector field, and the
//! equilibrium marker — no plotting dependencies, just generated markup.
//!
//! Writes `toy_field.svg` to the working directory; open it in a browser.
//! The same picture is available from the command line as
//! `elcd plot --data toy.csv --ckpt model.json --out toy_field.svg`.
//!
//! Run with: `cargo run --example field_plot`

use elcd::data::toy::gen_toy_linear;
use elcd::model::{ComposedModel, ModelConfig, ModelKind};
use elcd::plot::{render_svg, FieldPlot, PlotOptions};
use elcd::rollout::IntegratorConfig;
use elcd::train::{prepare_model_for, train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> elcd::Result<()> {
    let data = gen_toy_linear();

    let mut cfg = ModelConfig::new(ModelKind::Elcd, 2);
    cfg.flow.couplings = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model = ComposedModel::new(cfg, &mut rng)?;
    prepare_model_for(&mut model, &data);
    train(
        &mut model,
        &data,
        &TrainConfig {
            epochs: 150,
            learning_rate: 3e-3,
            seed: 23,
            ..Default::default()
        },
    )?;

    let mut field = |x: &[f64], out: &mut [f64]| model.field_for_integration(x, out);
    let fp = FieldPlot {
        field: &mut field,
        anchor: model.equilibrium().to_vec(),
        integrator: IntegratorConfig::rk4(0.01, 5.0),
    };
    let opts = PlotOptions {
        grid: 24,
        ..Default::default()
    };
    let svg = render_svg(&data, Some(fp), &opts)?;
    std::fs::write("toy_field.svg", &svg)
        .map_err(|e| elcd::Error::io("toy_field.svg", e))?;

    println!("wrote toy_field.svg ({} bytes)", svg.len());
    println!("  grey curves: demonstrations");
    println!("  colored curves: model rollouts from the demonstrated starts");
    println!("  arrows: learned vector field (equal length; direction only)");
    println!("  circle: learned equilibrium");
    Ok(())
}
