use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use coroplaq_core::centerline::{
    extract_centerline_single_seed, extract_centerline_two_seeds, ExtractionParams, TrackingParams,
};
use coroplaq_core::dual_energy::{meta_path_for, DeMeta};
use coroplaq_core::geom::Vec3;
use coroplaq_core::{load_volume, make_phantom, write_volume, PhantomKind, PhantomSpec, SectionMarkers};
use coroplaq_service::api::{serve, AppState};
use coroplaq_service::persist::PROJECT_SUFFIX;
use coroplaq_service::{load_project, run_pipeline, save_project, Command, PipelineConfig, Project, Session};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "coroplaq", version, about = "Coronary plaque analysis on CCTA volumes")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a phantom volume from a JSON spec.
    Phantom {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the analytic ground truth as JSON.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Extract a centerline from one seed (tracking) or two (minimal path).
    Centerline {
        #[arg(long)]
        volume: PathBuf,
        /// JSON list of [x, y, z] world points, or {"seeds": [...]}.
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        label: Option<String>,
    },
    /// Write the report of one lesion of a project.
    Report {
        #[arg(long)]
        project: PathBuf,
        #[arg(long)]
        lesion: String,
        #[arg(long)]
        out: PathBuf,
        /// Also write the HU histogram as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory holding project files; relative volume paths resolve here too.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the pipeline on a project file and save it back.
    Run {
        #[arg(long)]
        project: PathBuf,
        /// Register this volume first (creates the project if the file is missing).
        #[arg(long)]
        volume: Option<String>,
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long)]
        outer_threshold: Option<f64>,
        #[arg(long)]
        label: Option<String>,
    },
}

type Failure = Box<dyn std::error::Error>;

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn read_seeds(path: &Path) -> Result<Vec<Vec3>, Failure> {
    let v = read_json(path)?;
    let list = v.get("seeds").cloned().unwrap_or(v);
    Ok(serde_json::from_value(list).map_err(|e| format!("{}: seeds must be [[x, y, z], ...]: {e}", path.display()))?)
}

/// Keys given in the file override the defaults of its `kind`.
fn phantom_spec(v: Value) -> Result<PhantomSpec, Failure> {
    let Value::Object(given) = v else {
        return Err("phantom spec must be a JSON object".into());
    };
    let kind: PhantomKind = serde_json::from_value(given.get("kind").cloned().ok_or("phantom spec needs a kind")?)?;
    let mut merged = serde_json::to_value(PhantomSpec::new(kind))?;
    for (k, v) in given {
        merged[k] = v;
    }
    Ok(serde_json::from_value(merged)?)
}

fn phantom(spec: &Path, out: &Path, truth: Option<&Path>) -> Result<(), Failure> {
    let spec = phantom_spec(read_json(spec)?)?;
    let ph = make_phantom(&spec)?;
    write_volume(&ph.volume, out)?;
    println!("wrote {}", out.display());
    if let Some(high) = &ph.companion {
        let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("volume");
        let high_path = out.with_file_name(format!("{stem}_high.mhd"));
        write_volume(high, &high_path)?;
        let frame = format!("phantom-{}", spec.seed);
        for (path, kvp) in [(out, 80.0), (high_path.as_path(), 140.0)] {
            let meta = DeMeta {
                kvp: Some(kvp),
                frame_of_reference: Some(frame.clone()),
                series_time: None,
            };
            write_json(&meta_path_for(path), &serde_json::to_value(meta)?)?;
        }
        println!("wrote {} and metadata sidecars", high_path.display());
    }
    if let Some(t) = truth {
        write_json(t, &serde_json::to_value(&ph.truth)?)?;
    }
    Ok(())
}

fn centerline(volume: &Path, seeds: &Path, out: &Path, label: Option<String>) -> Result<(), Failure> {
    let v = load_volume(volume)?;
    let seeds = read_seeds(seeds)?;
    let ex = match seeds.as_slice() {
        [s] => extract_centerline_single_seed(&v, *s, None, &TrackingParams::default())?,
        [a, b] => extract_centerline_two_seeds(&v, *a, *b, None, &ExtractionParams::default())?,
        _ => return Err(format!("expected one or two seeds, got {}", seeds.len()).into()),
    };
    for w in &ex.warnings {
        log::warn!("{w}");
    }
    let c = ex.centerline.with_id("cl1").with_label(label);
    let mut body = serde_json::to_value(&c)?;
    body["markers"] = serde_json::to_value(SectionMarkers::full(&c))?;
    write_json(out, &body)?;
    println!("wrote {} ({} points, {:.1} mm)", out.display(), c.len(), c.total_length());
    Ok(())
}

fn report(project: &Path, lesion: &str, out: &Path, csv: Option<&Path>) -> Result<(), Failure> {
    let p = load_project(project)?;
    let l = p.lesion(lesion)?;
    if l.stale {
        log::warn!("lesion {lesion} is stale; run the pipeline to refresh it");
    }
    let mut body = serde_json::to_value(&l.report)?;
    body["stale"] = json!(l.stale);
    if let Some(de) = &l.de {
        body["dual_energy"] = serde_json::to_value(de)?;
    }
    write_json(out, &body)?;
    if let Some(path) = csv {
        fs::write(path, l.report.histogram.to_csv(l.report.voxel_volume_mm3)?)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn project_id(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("project");
    let stem = name
        .strip_suffix(PROJECT_SUFFIX)
        .or_else(|| name.strip_suffix(".json"))
        .unwrap_or(name);
    stem.to_string()
}

fn run(path: &Path, volume: Option<String>, seeds: Option<&Path>, config: PipelineConfig) -> Result<(), Failure> {
    let base = path.parent().filter(|d| !d.as_os_str().is_empty()).map(Path::to_path_buf);
    let mut s = if path.exists() {
        Session::open(load_project(path)?, base)?
    } else if volume.is_some() {
        let mut s = Session::new(project_id(path));
        if let Some(d) = base {
            s = s.with_base_dir(d);
        }
        s
    } else {
        return Err(format!("{} does not exist; pass --volume to create it", path.display()).into());
    };
    if let Some(v) = volume {
        if s.project().volume.as_ref().map(|r| r.path.as_str()) != Some(v.as_str()) {
            s.apply(Command::RegisterVolume { path: v })?;
        }
    }
    if let Some(f) = seeds {
        let seeds = read_seeds(f)?;
        if s.project().seeds != seeds {
            s.apply(Command::SetSeeds { seeds })?;
        }
    }
    let result = run_pipeline(&mut s, &config);
    // keep whatever the completed steps produced
    save_project(s.project(), path)?;
    let sum = result?;
    println!("{}", serde_json::to_string_pretty(&summary(s.project(), &sum))?);
    Ok(())
}

fn summary(p: &Project, sum: &coroplaq_service::pipeline::PipelineSummary) -> Value {
    let lesions: Vec<Value> = sum
        .lesions
        .iter()
        .map(|id| {
            let r = &p.lesions[id].report;
            json!({
                "lesion_id": id,
                "total_plaque_mm3": r.total_plaque_mm3,
                "stenosis_area_pct": r.stenosis_area_pct,
                "remodeling_index": r.remodeling_index,
            })
        })
        .collect();
    json!({ "actions": sum.actions, "centerlines": sum.centerlines, "lesions": lesions })
}

async fn serve_dir(host: IpAddr, port: u16, data: PathBuf) -> Result<(), Failure> {
    let state = AppState::with_data_dir(&data, Some(data.clone()))?;
    let addr = SocketAddr::new(host, port);
    log::info!("serving {} on http://{addr}", data.display());
    serve(Arc::new(state), addr).await?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Phantom { spec, out, truth } => phantom(&spec, &out, truth.as_deref()),
        Cmd::Centerline {
            volume,
            seeds,
            out,
            label,
        } => centerline(&volume, &seeds, &out, label),
        Cmd::Report {
            project,
            lesion,
            out,
            csv,
        } => report(&project, &lesion, &out, csv.as_deref()),
        Cmd::Serve { port, host, data } => tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(Failure::from)
            .and_then(|rt| rt.block_on(serve_dir(host, port, data))),
        Cmd::Run {
            project,
            volume,
            seeds,
            outer_threshold,
            label,
        } => run(&project, volume, seeds.as_deref(), PipelineConfig { outer_threshold, label }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
