use std::fs;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use fractfield_core::dfrft::{frft_3d, Frft3dPlans, FrftOrder};
use fractfield_core::fca::{
    branch_param_formula, count_branch_params, count_flops, extractor_layout, parse_ratio, FcaConfig,
    WeightSet, BRANCH_PARAM_FACTORS,
};
use fractfield_core::io::{load_field, load_labels, load_volume, save_field, save_labels, save_volume};
use fractfield_core::losses::LossConfig;
use fractfield_core::metrics::evaluate;
use fractfield_core::regopt::{register as run_registration, synth_pair, RegistrationConfig, SynthKind};
use fractfield_core::volume::normalize_unit;
use fractfield_core::warp::{warp_image, warp_labels};
use fractfield_core::Volume3D;

use crate::manifest::{write_atomic, Manifest};
use crate::{EvalArgs, FcaAuditArgs, FrftArgs, RegisterArgs, SliceDumpArgs, SynthArgs};

fn elapsed(m: &mut Manifest, t: Instant) {
    m.set("wall_time_s", t.elapsed().as_secs_f64());
}

pub fn frft(a: &FrftArgs, argv: &[String]) -> Result<()> {
    let t = Instant::now();
    let v = load_volume(&a.input)?;
    let plans = Frft3dPlans::for_dims(v.dims())?;
    let order = FrftOrder::new(a.order);
    let x = frft_3d(&v.to_complex(), order, &plans)?;
    let mag: Vec<f64> = x
        .data()
        .iter()
        .map(|c| if a.log { c.norm().ln_1p() } else { c.norm() })
        .collect();
    let phase: Vec<f64> = x.data().iter().map(|c| c.arg()).collect();
    save_volume(&v.with_data(mag)?, &a.out_mag)?;
    save_volume(&v.with_data(phase)?, &a.out_phase)?;

    let mut m = Manifest::new("frft", argv);
    m.set("input", &a.input);
    m.set("order", a.order);
    m.set("log_magnitude", a.log);
    m.set("output.magnitude", &a.out_mag);
    m.set("output.phase", &a.out_phase);
    m.set("seed", "none");
    elapsed(&mut m, t);
    m.write_next_to(&a.out_mag)?;
    Ok(())
}

fn shape_str(s: &[usize]) -> String {
    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

pub fn fca_audit(a: &FcaAuditArgs, argv: &[String]) -> Result<()> {
    let t = Instant::now();
    let alpha = parse_ratio(&a.alpha)?;
    let c = a.channels;
    let counts = count_branch_params(c, alpha)
        .with_context(|| format!("no integer branch split for C = {c}, alpha = {alpha}"))?;
    let flops = a.grid.map(|g| count_flops(c, alpha, g)).transpose()?;
    let formula = branch_param_formula(c as u64, alpha);
    let cfg = FcaConfig {
        channel_coeff: alpha,
        ..FcaConfig::default()
    };
    let ac = cfg.branch_channels(c)?;

    let mut csv = String::from("section,name,shape,count,flops,formula\n");
    let names = ["FrFT0", "FrFT45", "FrFT90", "log-magnitude", "total"];
    let shapes = [
        shape_str(&[3, 3, 3, ac, ac]),
        shape_str(&[1, 1, 1, 2 * ac, 2 * ac]),
        shape_str(&[1, 1, 1, 2 * ac, 2 * ac]),
        shape_str(&[1, 1, 1, ac, ac]),
        String::new(),
    ];
    for i in 0..5 {
        let fl = flops.map(|f| f.as_array()[i].to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "params,{},{},{},{},{}*alpha^2*C^2={}\n",
            names[i],
            shapes[i],
            counts.as_array()[i],
            fl,
            BRANCH_PARAM_FACTORS[i],
            formula[i]
        ));
    }

    let layout = extractor_layout("fe", c, &cfg)?;
    let weights = WeightSet::init(&layout, 0);
    let rows = weights.audit(&layout)?;
    let mut kernels = 0usize;
    for r in &rows {
        csv.push_str(&format!(
            "audit,{},{},{},,\n",
            r.name,
            shape_str(&r.shape),
            r.numel
        ));
        let branch = ["fe.b0.kernel", "fe.b45.kernel", "fe.b90.kernel", "fe.blog.kernel"];
        if branch.contains(&r.name.as_str()) {
            kernels += r.numel;
        }
    }
    let verdict = if kernels as u64 == counts.total {
        "matches"
    } else {
        "MISMATCH"
    };
    csv.push_str(&format!("audit,branch_kernel_total,,{kernels},,{verdict}\n"));
    print!("{csv}");
    if kernels as u64 != counts.total {
        bail!(
            "weight-set audit found {kernels} kernel weights, formula gives {}",
            counts.total
        );
    }

    if let Some(out) = &a.out {
        fs::write(out, &csv).with_context(|| format!("cannot write {out}"))?;
        let mut m = Manifest::new("fca-audit", argv);
        m.set("channels", c);
        m.set("alpha", alpha);
        m.set("grid", a.grid.map(|g| shape_str(&g)).unwrap_or_default());
        m.set("output.csv", out);
        m.set("seed", 0);
        elapsed(&mut m, t);
        m.write_next_to(out)?;
    }
    Ok(())
}

pub fn register(a: &RegisterArgs, argv: &[String]) -> Result<()> {
    let t = Instant::now();
    let fixed = load_volume(&a.fixed)?;
    let moving = load_volume(&a.moving)?;
    let fixed_n = normalize_unit(&fixed).with_context(|| format!("normalizing {}", a.fixed))?;
    let moving_n = normalize_unit(&moving).with_context(|| format!("normalizing {}", a.moving))?;
    let cfg = RegistrationConfig {
        iterations: a.iters,
        step_size: a.step,
        pyramid_levels: a.levels,
        loss: LossConfig {
            window: a.cc_window,
            lambda: a.lambda,
            ..LossConfig::default()
        },
        seed: a.seed,
        ..RegistrationConfig::default()
    };
    let result = run_registration(&fixed_n, &moving_n, &cfg)?;
    save_field(&result.field, &a.out_field)?;
    save_volume(&warp_image(&moving, &result.field)?, &a.out_warped)?;
    if let Some(path) = &a.trace {
        fs::write(path, result.trace_csv()).with_context(|| format!("cannot write {path}"))?;
    }
    if let (Some(src), Some(dst)) = (&a.moving_labels, &a.out_warped_labels) {
        let labels = load_labels(src)?;
        save_labels(&warp_labels(&labels, &result.field)?, dst)?;
    }

    let first = result
        .loss_trace
        .first()
        .map(|e| e.terms.total)
        .unwrap_or(f64::NAN);
    let last = result
        .loss_trace
        .last()
        .map(|e| e.terms.total)
        .unwrap_or(f64::NAN);
    println!(
        "registered in {:.2}s: {} iterations, loss {first} -> {last}",
        result.wall_time, cfg.iterations
    );

    let mut m = Manifest::new("register", argv);
    m.set("input.fixed", &a.fixed);
    m.set("input.moving", &a.moving);
    m.set("config.iterations", cfg.iterations);
    m.set("config.step_size", cfg.step_size);
    m.set("config.beta1", cfg.beta1);
    m.set("config.beta2", cfg.beta2);
    m.set("config.adam_eps", cfg.adam_eps);
    m.set("config.pyramid_levels", cfg.pyramid_levels);
    m.set("config.lambda", cfg.loss.lambda);
    m.set("config.cc_window", cfg.loss.window);
    m.set("config.cc_epsilon", cfg.loss.epsilon);
    m.set("output.field", &a.out_field);
    m.set("output.warped", &a.out_warped);
    if let Some(p) = &a.trace {
        m.set("output.trace", p);
    }
    if let Some(p) = &a.out_warped_labels {
        m.set("output.warped_labels", p);
    }
    m.set("final_loss", last);
    m.set("seed", cfg.seed);
    elapsed(&mut m, t);
    m.write_next_to(&a.out_field)?;
    Ok(())
}

pub fn synth(a: &SynthArgs, argv: &[String]) -> Result<()> {
    let t = Instant::now();
    let kind = SynthKind::parse(&a.kind, &a.magnitude)?;
    let pair = synth_pair(kind, a.dims, a.spacing, a.seed)?;
    let p = &a.out_prefix;
    if let Some(dir) = std::path::Path::new(p)
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
    {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let paths = ["fixed", "moving", "truth", "fixed_labels", "moving_labels"].map(|s| format!("{p}_{s}"));
    save_volume(&pair.fixed, &paths[0])?;
    save_volume(&pair.moving, &paths[1])?;
    save_field(&pair.truth, &paths[2])?;
    save_labels(&pair.fixed_labels, &paths[3])?;
    save_labels(&pair.moving_labels, &paths[4])?;

    let mut m = Manifest::new("synth", argv);
    m.set("kind", kind.name());
    m.set("magnitude", &a.magnitude);
    m.set("dims", shape_str(&a.dims));
    m.set(
        "spacing",
        format!("{},{},{}", a.spacing[0], a.spacing[1], a.spacing[2]),
    );
    for (k, path) in ["fixed", "moving", "truth", "fixed_labels", "moving_labels"]
        .iter()
        .zip(&paths)
    {
        m.set(&format!("output.{k}"), format!("{path}.vh"));
    }
    m.set("seed", a.seed);
    elapsed(&mut m, t);
    m.write_next_to(p)?;
    Ok(())
}

pub fn eval(a: &EvalArgs, argv: &[String]) -> Result<()> {
    let t = Instant::now();
    let fixed = load_labels(&a.fixed_labels)?;
    let warped = load_labels(&a.warped_labels)?;
    let field = load_field(&a.field)?;
    let report = evaluate(&fixed, &warped, &field)?;
    write_atomic(std::path::Path::new(&a.out), report.to_csv().as_bytes())?;
    println!(
        "overall_dsc {} avg_dsc {} folding_pct {} jacobian_std {}",
        report.overall_dsc, report.avg_dsc, report.folding_pct, report.jacobian_std
    );

    let mut m = Manifest::new("eval", argv);
    m.set("input.fixed_labels", &a.fixed_labels);
    m.set("input.warped_labels", &a.warped_labels);
    m.set("input.field", &a.field);
    m.set("output.report", &a.out);
    m.set("overall_dsc_definition", "dice of the union of foreground labels");
    m.set("avg_dsc_definition", "unweighted mean of per-label dice");
    m.set("seed", "none");
    elapsed(&mut m, t);
    m.write_next_to(&a.out)?;
    Ok(())
}

/// Min-max scaled 8-bit slice as binary PGM; a constant slice maps to 0.
pub fn slice_pgm(v: &Volume3D, axis: usize, index: usize) -> Result<Vec<u8>> {
    let d = v.dims();
    if index >= d[axis] {
        bail!("slice index {index} out of range for axis of length {}", d[axis]);
    }
    let (rows, cols) = match axis {
        0 => (d[1], d[2]),
        1 => (d[0], d[2]),
        _ => (d[0], d[1]),
    };
    let at = |r: usize, c: usize| match axis {
        0 => v.get(index, r, c),
        1 => v.get(r, index, c),
        _ => v.get(r, c, index),
    };
    let vals: Vec<f64> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .map(|(r, c)| at(r, c))
        .collect();
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(vals.iter().map(|&x| {
        if hi > lo {
            ((x - lo) / (hi - lo) * 255.0).round() as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn slice_dump(a: &SliceDumpArgs, argv: &[String]) -> Result<()> {
    let t = Instant::now();
    let v = load_volume(&a.input)?;
    let bytes = slice_pgm(&v, a.axis, a.index)?;
    fs::write(&a.out, bytes).with_context(|| format!("cannot write {}", a.out))?;
    let mut m = Manifest::new("slice-dump", argv);
    m.set("input", &a.input);
    m.set("axis", ["z", "y", "x"][a.axis]);
    m.set("index", a.index);
    m.set("output.image", &a.out);
    m.set("seed", "none");
    elapsed(&mut m, t);
    m.write_next_to(&a.out)?;
    Ok(())
}
