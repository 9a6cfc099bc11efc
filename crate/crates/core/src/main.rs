use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use mobile_maps::harness::{self, Functional, SuiteOptions, TestReport};
use mobile_maps::maps::{self, HalfEdgeMap, Sign, WeightSeq};
use mobile_maps::metrics;
use mobile_maps::tree_core::{contour_process, label_process, LabeledTypedTree};

#[derive(Parser)]
#[command(name = "mobile-maps", version, about = "Boltzmann planar maps through labeled mobiles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a Boltzmann map with a given number of vertices.
    Sample {
        /// Face weights as JSON, e.g. '{"5":1}'.
        #[arg(long)]
        q: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "plus")]
        sign: Sign,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Map in text form.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Mobile as JSON.
        #[arg(long)]
        mobile_out: Option<PathBuf>,
        /// Contour and label processes of the mobile as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Encode a map file as a mobile, or decode a mobile file with --inverse.
    Encode {
        input: PathBuf,
        #[arg(long)]
        inverse: bool,
        /// Root sign of the decoded map.
        #[arg(long, default_value = "plus")]
        sign: Sign,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count rooted (optionally pointed) maps by number of edges.
    Enumerate {
        #[arg(long, default_value_t = 4)]
        max_edges: usize,
        /// Allowed face degrees, comma separated.
        #[arg(long, value_delimiter = ',')]
        degrees: Option<Vec<usize>>,
        #[arg(long)]
        pointed: bool,
        /// Write every map in text form, one per line.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run verification suites.
    Verify {
        /// Suite name or "all".
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 7)]
        max_vertices: usize,
        #[arg(long, default_value_t = 3)]
        max_k: usize,
        #[arg(long, default_value_t = 4)]
        max_edges: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, value_delimiter = ',', default_value = "512,1024,2048,4096,8192")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit the growth exponent of a map functional.
    Scaling {
        #[arg(long)]
        q: String,
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value = "label_range")]
        functional: Functional,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Sample a discrete Brownian snake, or compare mobiles against snakes.
    Snake {
        #[arg(long, default_value_t = 256)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Trace as CSV with columns s,e,z.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Face weights for --compare.
        #[arg(long, default_value = r#"{"5":1}"#)]
        q: String,
        /// Run the snake comparison suite on conditioned mobiles with n type-1 vertices.
        #[arg(long)]
        compare: bool,
        #[arg(long, default_value_t = 400)]
        samples: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn write_or_print(path: &Option<PathBuf>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn finish(reports: &[TestReport], path: &Option<PathBuf>) -> anyhow::Result<ExitCode> {
    for r in reports {
        eprintln!("{r}");
    }
    let text = serde_json::to_string_pretty(reports)? + "\n";
    match path {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(if reports.iter().all(|r| r.pass) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn mobile_csv(t: &LabeledTypedTree) -> String {
    let c = contour_process(t);
    let z = label_process(t);
    let g = c.grid_size();
    let mut out = String::from("s,c,z\n");
    for i in 0..=g {
        out.push_str(&format!("{},{},{}\n", i as f64 / g as f64, c.at_grid(i), z.at_grid(i)));
    }
    out
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Sample {
            q,
            n,
            sign,
            seed,
            out,
            mobile_out,
            csv,
        } => {
            let q = WeightSeq::from_json(&q)?;
            let mut sampler = harness::sampler_for(&q)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let enc = maps::boltzmann_sample(&mut sampler, n, sign, &mut rng, 10_000_000)?;
            if let Some(p) = &mobile_out {
                fs::write(p, enc.mobile.to_json_string())?;
            }
            if let Some(p) = &csv {
                fs::write(p, mobile_csv(&enc.mobile))?;
            }
            let m = &enc.map;
            if let Some(p) = &out {
                fs::write(p, m.to_text() + "\n")?;
            }
            let summary = json!({
                "vertices": m.n_vertices(),
                "edges": m.n_edges(),
                "faces": m.n_faces(),
                "face_degrees": m.face_degrees(),
                "sign": m.classify_sign()?,
                "mobile_vertices": enc.mobile.len(),
                "mobile_height": enc.mobile.height(),
                "seed": seed,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if out.is_none() {
                println!("{}", m.to_text());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Encode {
            input,
            inverse,
            sign,
            out,
        } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            if inverse {
                let t = LabeledTypedTree::from_json_str(text.trim())?;
                let enc = maps::bdg_inverse(&t, sign)?;
                write_or_print(&out, &(enc.map.to_text() + "\n"))?;
            } else {
                let mut m = HalfEdgeMap::from_text(text.trim())?;
                if m.point().is_none() {
                    bail!("the map has no pointed vertex");
                }
                if m.classify_sign()? == Sign::Minus {
                    m = m.reverse_root()?;
                    eprintln!("negative map: root reversed before encoding");
                }
                let enc = maps::bdg_forward(&m)?;
                write_or_print(&out, &(enc.mobile.to_json_string() + "\n"))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Enumerate {
            max_edges,
            degrees,
            pointed,
            out,
        } => {
            let ms = maps::enumerate_maps(max_edges, |d| degrees.as_ref().map_or(true, |s| maps::degrees_in(s)(d)))?;
            let ms: Vec<HalfEdgeMap> = if pointed {
                ms.iter().flat_map(maps::pointed_variants).collect()
            } else {
                ms
            };
            let mut counts = vec![0usize; max_edges + 1];
            for m in &ms {
                counts[m.n_edges()] += 1;
            }
            if let Some(p) = &out {
                let lines: Vec<String> = ms.iter().map(|m| m.to_text()).collect();
                fs::write(p, lines.join("\n") + "\n")?;
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({"pointed": pointed, "degrees": degrees, "counts_by_edges": counts}))?
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            suite,
            max_vertices,
            max_k,
            max_edges,
            samples,
            reps,
            n,
            seed,
            report,
        } => {
            let o = SuiteOptions {
                seed,
                max_vertices,
                max_k,
                max_edges,
                samples,
                reps,
                n_list: n,
            };
            let names: Vec<&str> = if suite == "all" {
                harness::SUITES.to_vec()
            } else {
                suite.split(',').collect()
            };
            let mut reports = Vec::new();
            for name in names {
                reports.extend(harness::run_suite(name, &o)?);
            }
            finish(&reports, &report)
        }
        Command::Scaling {
            q,
            n,
            reps,
            functional,
            seed,
            report,
        } => {
            let q = WeightSeq::from_json(&q)?;
            let r = harness::scaling_estimate(&q, &n, reps, functional, seed)?;
            finish(&[r], &report)
        }
        Command::Snake {
            n,
            seed,
            out,
            q,
            compare,
            samples,
            report,
        } => {
            if compare {
                let q = WeightSeq::from_json(&q)?;
                let reports = harness::snake_compare(&q, n, samples, seed)?;
                return finish(&reports, &report);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = metrics::brownian_snake_sample(n, &mut rng)?;
            write_or_print(&out, &s.to_csv())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
