//! Command-line surface and its validation into typed method plans.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stegolab::ica_watermark::QimParams;
use stegolab::lsb_stego::{KeySet, LsbMethod};
use stegolab::sparse_coding::Dictionary;
use stegolab::sparse_stego::SparseStegoParams;

use crate::exit::Failure;

#[derive(Debug, Parser)]
#[command(name = "stegolab", version, about = "Steganography, steganalysis and watermark attack experiments")]
pub struct Cli {
    /// Worker threads for the data-parallel stages.
    #[arg(long, env = "STEGOLAB_THREADS", global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hide a message file in a PGM cover.
    Embed(EmbedArgs),
    /// Recover a message from a stego PGM.
    Extract(ExtractArgs),
    /// Histogram, chi-square and co-occurrence statistics of PGM images.
    Analyze(AnalyzeArgs),
    /// Run the experiment suite and score it against its thresholds.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Lsb,
    Lsbplus,
    LsbplusImproved,
    Sparse,
    IcaQim,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Lsb => "lsb",
            Method::Lsbplus => "lsbplus",
            Method::LsbplusImproved => "lsbplus-improved",
            Method::Sparse => "sparse",
            Method::IcaQim => "ica-qim",
        }
    }

    fn lsb(self) -> Option<LsbMethod> {
        match self {
            Method::Lsb => Some(LsbMethod::Lsb),
            Method::Lsbplus => Some(LsbMethod::LsbPlus),
            Method::LsbplusImproved => Some(LsbMethod::Improved),
            _ => None,
        }
    }
}

fn parse_key(text: &str) -> Result<u64, String> {
    stegolab::prng::parse_key(text).ok_or_else(|| format!("{text:?} is not 16 hex digits"))
}

#[derive(Clone, Debug, Default, Args)]
pub struct KeyArgs {
    /// Encryption key, 16 hex digits.
    #[arg(long, value_parser = parse_key)]
    pub key1: Option<u64>,
    /// Lock key, 16 hex digits (lsbplus-improved).
    #[arg(long, value_parser = parse_key)]
    pub key2: Option<u64>,
    /// Traversal key, 16 hex digits.
    #[arg(long, value_parser = parse_key)]
    pub key3: Option<u64>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct ParamArgs {
    /// Seed for dictionary learning (sparse) or ICA (ica-qim).
    #[arg(long)]
    pub seed: Option<u64>,
    /// QIM quantization step (ica-qim); chosen from --target-psnr when absent.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub target_psnr: Option<f64>,
    /// Block side in pixels (sparse: 8, ica-qim: 16).
    #[arg(long)]
    pub block_side: Option<usize>,
    /// Dictionary size (sparse, default 129).
    #[arg(long)]
    pub atoms: Option<usize>,
    /// Nonzeros per block (sparse, default 31).
    #[arg(long)]
    pub sparsity: Option<usize>,
    /// KSVD sweeps (sparse, default 10).
    #[arg(long)]
    pub ksvd_iters: Option<usize>,
    /// PCA dimension of the ICA basis (ica-qim, default 16).
    #[arg(long)]
    pub components: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// Cover image (binary PGM).
    #[arg(long, short = 'i')]
    pub input: PathBuf,
    /// Message file, embedded byte for byte.
    #[arg(long, short = 'm')]
    pub message: PathBuf,
    /// Stego image to write.
    #[arg(long, short = 'o')]
    pub output: PathBuf,
    /// Key artifact to write: SDICT1 dictionary (sparse) or ICAKEY1 basis (ica-qim).
    #[arg(long)]
    pub key_out: Option<PathBuf>,
    /// Also write the modified SCODE1 code, for oracle-mode extraction (sparse).
    #[arg(long)]
    pub code_out: Option<PathBuf>,
    /// JSON report destination; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub keys: KeyArgs,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long, value_enum)]
    pub method: Method,
    /// Stego image (binary PGM).
    #[arg(long, short = 'i')]
    pub input: PathBuf,
    /// Recovered message file to write.
    #[arg(long, short = 'o')]
    pub output: PathBuf,
    /// Key artifact written by embed (sparse, ica-qim).
    #[arg(long)]
    pub key: Option<PathBuf>,
    /// Read bits from this SCODE1 code instead of re-running OMP (sparse).
    #[arg(long)]
    pub oracle_code: Option<PathBuf>,
    /// Original message; adds the raw bit error rate to the report (sparse, ica-qim).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub keys: KeyArgs,
    #[command(flatten)]
    pub params: ParamArgs,
}

fn parse_offset(text: &str) -> Result<(isize, isize), String> {
    let (a, b) = text.split_once(',').ok_or("expected DX,DY")?;
    let dx = a.trim().parse().map_err(|e| format!("dx: {e}"))?;
    let dy = b.trim().parse().map_err(|e| format!("dy: {e}"))?;
    Ok((dx, dy))
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Images to analyze.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Cover to compare every input against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Co-occurrence offset DX,DY.
    #[arg(long, value_parser = parse_offset, allow_hyphen_values = true)]
    pub cooccurrence: Option<(isize, isize)>,
    /// Write the co-occurrence matrix as CSV; with several inputs, `-N` is
    /// appended to the file stem for input N.
    #[arg(long, requires = "cooccurrence")]
    pub cooccurrence_out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    All,
    /// Capacity, distortion, oracle and noise experiments of the sparse method.
    Sparse,
    /// Histogram preservation and round trips over random small images.
    LsbProps,
    /// Capacity parity and distortion ordering of the two histogram-preserving methods.
    LsbCompare,
    ChiSquare,
    Ica,
    /// Carrier recovery scatter of the watermark-only attack.
    Woa,
    Qim,
    Determinism,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(value_enum, default_value = "all")]
    pub suite: Suite,
    /// Directory for results.json and CSV side files.
    #[arg(long, default_value = "bench-out")]
    pub out: PathBuf,
    /// Master seed; trial t uses prng_mix(seed, t).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory of PGM covers, center-cropped to each experiment's size.
    /// Synthetic covers are used when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Small trial counts, for smoke runs.
    #[arg(long)]
    pub quick: bool,
}

/// A method with everything it needs, validated.
#[derive(Clone, Debug, PartialEq)]
pub enum Plan {
    Lsb { method: LsbMethod, keys: KeySet },
    Sparse(SparseStegoParams),
    Qim(QimParams),
}

fn reject(method: Method, flags: &[(&str, bool)]) -> Result<(), Failure> {
    let given: Vec<&str> = flags.iter().filter(|(_, set)| *set).map(|(name, _)| *name).collect();
    if given.is_empty() {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "{} does not apply to --method {}",
            given.join(", "),
            method.name()
        )))
    }
}

fn lsb_keys(method: LsbMethod, k: &KeyArgs) -> Result<KeySet, Failure> {
    let need = |v: Option<u64>, name: &str| v.ok_or_else(|| Failure::Usage(format!("--method {} needs {name}", method.name())));
    let key1 = need(k.key1, "--key1")?;
    let key3 = need(k.key3, "--key3")?;
    let key2 = match method {
        LsbMethod::Improved => need(k.key2, "--key2")?,
        _ => {
            if k.key2.is_some() {
                return Err(Failure::Usage(format!("--key2 does not apply to --method {}", method.name())));
            }
            0
        }
    };
    Ok(KeySet { key1, key2, key3 })
}

/// Validates the flags for `method`. `dictionary` fills sparse dimensions
/// that were not given explicitly when extracting.
pub fn plan(method: Method, keys: &KeyArgs, p: &ParamArgs, dictionary: Option<&Dictionary>) -> Result<Plan, Failure> {
    let keys_given = [
        ("--key1", keys.key1.is_some()),
        ("--key2", keys.key2.is_some()),
        ("--key3", keys.key3.is_some()),
    ];
    if let Some(lsb) = method.lsb() {
        reject(
            method,
            &[
                ("--seed", p.seed.is_some()),
                ("--delta", p.delta.is_some()),
                ("--target-psnr", p.target_psnr.is_some()),
                ("--block-side", p.block_side.is_some()),
                ("--atoms", p.atoms.is_some()),
                ("--sparsity", p.sparsity.is_some()),
                ("--ksvd-iters", p.ksvd_iters.is_some()),
                ("--components", p.components.is_some()),
            ],
        )?;
        return Ok(Plan::Lsb {
            method: lsb,
            keys: lsb_keys(lsb, keys)?,
        });
    }
    reject(method, &keys_given)?;
    match method {
        Method::Sparse => {
            reject(
                method,
                &[
                    ("--delta", p.delta.is_some()),
                    ("--target-psnr", p.target_psnr.is_some()),
                    ("--components", p.components.is_some()),
                ],
            )?;
            let d = SparseStegoParams::default();
            let side_from_key = dictionary.map(|k| (k.atom_dim() as f64).sqrt().round() as usize);
            let params = SparseStegoParams {
                block_side: p.block_side.or(side_from_key).unwrap_or(d.block_side),
                atom_count: p.atoms.or(dictionary.map(Dictionary::atom_count)).unwrap_or(d.atom_count),
                sparsity: p.sparsity.unwrap_or(d.sparsity),
                ksvd_iters: p.ksvd_iters.unwrap_or(d.ksvd_iters),
                seed: p.seed.unwrap_or(d.seed),
                ..d
            };
            if params.atom_count == 0 || params.sparsity == 0 || params.ksvd_iters == 0 {
                return Err(Failure::Usage("--atoms, --sparsity and --ksvd-iters must be positive".into()));
            }
            params.validate()?;
            Ok(Plan::Sparse(params))
        }
        Method::IcaQim => {
            reject(
                method,
                &[
                    ("--atoms", p.atoms.is_some()),
                    ("--sparsity", p.sparsity.is_some()),
                    ("--ksvd-iters", p.ksvd_iters.is_some()),
                ],
            )?;
            let d = QimParams::default();
            if let Some(delta) = p.delta {
                if !(delta.is_finite() && delta > 0.0) {
                    return Err(Failure::Usage(format!("--delta {delta} must be positive")));
                }
            }
            let params = QimParams {
                block_side: p.block_side.unwrap_or(d.block_side),
                components: p.components.unwrap_or(d.components),
                delta: p.delta,
                target_psnr_db: p.target_psnr.unwrap_or(d.target_psnr_db),
                seed: p.seed.unwrap_or(d.seed),
            };
            if params.block_side == 0 || params.components < 2 {
                return Err(Failure::Usage("--block-side must be positive and --components at least 2".into()));
            }
            Ok(Plan::Qim(params))
        }
        _ => unreachable!("lsb methods handled above"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("stegolab").chain(args.iter().copied()))
    }

    fn embed_args(extra: &[&str]) -> EmbedArgs {
        let mut args = vec!["embed", "-i", "c.pgm", "-m", "m.bin", "-o", "s.pgm"];
        args.extend_from_slice(extra);
        match parse(&args).unwrap().command {
            Command::Embed(a) => a,
            other => panic!("parsed {other:?}"),
        }
    }

    const K: &str = "0123456789abcdef";

    #[test]
    fn method_names_round_trip_through_clap() {
        for m in Method::value_variants() {
            let a = embed_args(&["--method", m.name()]);
            assert_eq!(a.method, *m);
        }
    }

    #[test]
    fn keys_must_be_sixteen_hex_digits() {
        assert!(parse(&["embed", "--method", "lsb", "-i", "a", "-m", "b", "-o", "c", "--key1", "123"]).is_err());
        assert!(parse(&["embed", "--method", "lsb", "-i", "a", "-m", "b", "-o", "c", "--key1", "0123456789abcdeg"]).is_err());
        let a = embed_args(&["--method", "lsb", "--key1", K]);
        assert_eq!(a.keys.key1, Some(0x0123456789abcdef));
    }

    #[test]
    fn improved_needs_all_three_keys() {
        let a = embed_args(&["--method", "lsbplus-improved", "--key1", K, "--key3", K]);
        let err = plan(a.method, &a.keys, &a.params, None).unwrap_err();
        assert!(matches!(err, Failure::Usage(_)), "{err:?}");
        let a = embed_args(&["--method", "lsbplus-improved", "--key1", K, "--key2", K, "--key3", K]);
        assert!(matches!(plan(a.method, &a.keys, &a.params, None), Ok(Plan::Lsb { .. })));
    }

    #[test]
    fn inapplicable_flags_are_usage_errors() {
        let cases: [&[&str]; 4] = [
            &["--method", "lsb", "--key1", K, "--key3", K, "--atoms", "10"],
            &["--method", "lsbplus", "--key1", K, "--key2", K, "--key3", K],
            &["--method", "sparse", "--delta", "2"],
            &["--method", "ica-qim", "--key1", K],
        ];
        for extra in cases {
            let a = embed_args(extra);
            assert!(matches!(plan(a.method, &a.keys, &a.params, None), Err(Failure::Usage(_))), "{extra:?}");
        }
    }

    #[test]
    fn sparse_defaults_and_overrides() {
        let a = embed_args(&["--method", "sparse"]);
        assert_eq!(plan(a.method, &a.keys, &a.params, None).unwrap(), Plan::Sparse(SparseStegoParams::default()));
        let a = embed_args(&["--method", "sparse", "--sparsity", "40"]);
        assert!(matches!(plan(a.method, &a.keys, &a.params, None), Err(Failure::Usage(_))));
        let a = embed_args(&["--method", "sparse", "--block-side", "4", "--atoms", "20", "--sparsity", "3"]);
        match plan(a.method, &a.keys, &a.params, None).unwrap() {
            Plan::Sparse(p) => assert_eq!((p.block_side, p.atom_count, p.sparsity), (4, 20, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn qim_delta_must_be_positive() {
        let a = embed_args(&["--method", "ica-qim", "--delta", "0"]);
        assert!(matches!(plan(a.method, &a.keys, &a.params, None), Err(Failure::Usage(_))));
        let a = embed_args(&["--method", "ica-qim", "--delta", "3.5"]);
        match plan(a.method, &a.keys, &a.params, None).unwrap() {
            Plan::Qim(p) => assert_eq!(p.delta, Some(3.5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn offsets_parse_with_signs() {
        assert_eq!(parse_offset("1,0"), Ok((1, 0)));
        assert_eq!(parse_offset("-2, 3"), Ok((-2, 3)));
        assert!(parse_offset("1").is_err());
    }
}
