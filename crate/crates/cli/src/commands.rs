//! embed, extract and analyze. Each returns the JSON report; the caller
//! decides where it goes.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use stegolab::ica_watermark::{ica_block_watermark_embed, ica_block_watermark_extract, IcaBasisKey};
use stegolab::imageio::{read_pgm, write_pgm};
use stegolab::lsb_stego::{embed as lsb_embed, extract as lsb_extract};
use stegolab::sparse_coding::{Dictionary, SparseCode};
use stegolab::sparse_stego::{capacity, sparse_embed, sparse_extract, sparse_extract_raw};
use stegolab::steganalysis::{
    ber, chi_square_from_histogram, cooccurrence, cooccurrence_change, hist_change_of, histogram, psnr,
    DEFAULT_MIN_EXPECTED,
};
use stegolab::{bits_to_bytes, bytes_to_bits, frame_message, GrayImage};

use crate::config::{plan, AnalyzeArgs, EmbedArgs, ExtractArgs, Method, Plan};
use crate::exit::Failure;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub fn read_image(path: &Path) -> Result<GrayImage, Failure> {
    read_pgm(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str, method: Method) -> Result<&'a Path, Failure> {
    path.as_deref()
        .ok_or_else(|| Failure::Usage(format!("--method {} needs {flag}", method.name())))
}

fn key_file<T>(path: &Path, parse: impl FnOnce(&[u8]) -> stegolab::Result<T>) -> Result<T, Failure> {
    parse(&read(path)?).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

/// Adds the method name to a capacity failure's report.
fn tag(method: Method) -> impl Fn(stegolab::Error) -> Failure {
    move |e| match Failure::from(e) {
        Failure::Capacity {
            capacity,
            required,
            mut report,
        } => {
            report["method"] = json!(method.name());
            Failure::Capacity {
                capacity,
                required,
                report,
            }
        }
        other => other,
    }
}

pub fn embed(a: &EmbedArgs) -> Result<Value, Failure> {
    let p = plan(a.method, &a.keys, &a.params, None)?;
    if a.code_out.is_some() && a.method != Method::Sparse {
        return Err(Failure::Usage("--code-out applies to --method sparse only".into()));
    }
    if a.key_out.is_some() && !matches!(p, Plan::Sparse(_) | Plan::Qim(_)) {
        return Err(Failure::Usage(format!("--method {} writes no key file", a.method.name())));
    }
    let cover = read_image(&a.input)?;
    let msg = read(&a.message)?;
    let tag = tag(a.method);
    let report = match p {
        Plan::Lsb { method, keys } => {
            let (stego, r) = lsb_embed(&cover, &msg, method, &keys).map_err(tag)?;
            write(&a.output, &write_pgm(&stego))?;
            json!({
                "method": method.name(),
                "capacity_bits": r.capacity_bits,
                "used_bits": r.used_bits,
                "intentional_count": r.intentional_count,
                "intentional_changes": r.intentional_changes,
                "psnr_db": r.psnr_db,
                "hist_change": r.hist_change,
            })
        }
        Plan::Sparse(params) => {
            let key_out = required(&a.key_out, "--key-out", a.method)?;
            let out = sparse_embed(&cover, &msg, &params).map_err(tag)?;
            write(&a.output, &write_pgm(&out.stego))?;
            write(key_out, &out.dictionary.to_bytes())?;
            if let Some(path) = &a.code_out {
                write(path, &out.code.to_bytes())?;
            }
            let r = out.report;
            json!({
                "method": "sparse",
                "capacity_bits": r.capacity_bits,
                "capacity_bound": r.capacity_bound,
                "nnz": r.nnz,
                "used_bits": r.used_bits,
                "psnr_db": r.psnr_db,
                "ksvd_objective": r.ksvd_objective,
            })
        }
        Plan::Qim(params) => {
            let key_out = required(&a.key_out, "--key-out", a.method)?;
            let (stego, key, r) = ica_block_watermark_embed(&cover, &frame_message(&msg), &params).map_err(tag)?;
            write(&a.output, &write_pgm(&stego))?;
            write(key_out, &key.to_bytes())?;
            json!({
                "method": "ica-qim",
                "capacity_bits": r.capacity_bits,
                "used_bits": r.used_bits,
                "delta": r.delta,
                "component": key.component,
                "psnr_db": r.psnr_db,
                "ica_converged": r.ica_converged,
            })
        }
    };
    Ok(report)
}

/// Reads the 32-bit header from the front of `bits` and checks it against
/// `available` payload bits.
fn announced(bits: &[u8], available: usize) -> Result<usize, Failure> {
    let n = bits[..32].iter().fold(0u64, |acc, &b| (acc << 1) | u64::from(b)) as usize;
    if n > available {
        return Err(Failure::Corrupt(format!("header announces {n} bits, {available} available")));
    }
    Ok(n)
}

pub fn extract(a: &ExtractArgs) -> Result<Value, Failure> {
    let dictionary = match (a.method, &a.key) {
        (Method::Sparse, Some(path)) => Some(key_file(path, Dictionary::from_bytes)?),
        _ => None,
    };
    let p = plan(a.method, &a.keys, &a.params, dictionary.as_ref())?;
    if a.oracle_code.is_some() && a.method != Method::Sparse {
        return Err(Failure::Usage("--oracle-code applies to --method sparse only".into()));
    }
    if a.reference.is_some() && !matches!(p, Plan::Sparse(_) | Plan::Qim(_)) {
        return Err(Failure::Usage("--reference applies to sparse and ica-qim".into()));
    }
    if a.key.is_some() && !matches!(p, Plan::Sparse(_) | Plan::Qim(_)) {
        return Err(Failure::Usage(format!("--method {} reads no key file", a.method.name())));
    }
    let stego = read_image(&a.input)?;
    let reference = a.reference.as_deref().map(read).transpose()?;
    let (message, mut report) = match p {
        Plan::Lsb { method, keys } => {
            let message = lsb_extract(&stego, method, &keys)?;
            (message, json!({ "method": method.name() }))
        }
        Plan::Sparse(params) => {
            required(&a.key, "--key", a.method)?;
            let dictionary = dictionary.expect("loaded above");
            let oracle = a
                .oracle_code
                .as_deref()
                .map(|path| key_file(path, SparseCode::from_bytes))
                .transpose()?;
            let mut report = json!({ "method": "sparse", "oracle": oracle.is_some() });
            if let Some(msg) = &reference {
                let sent = frame_message(msg);
                let got = sparse_extract_raw(&stego, &dictionary, &params, oracle.as_ref(), sent.len())?;
                report["ber"] = json!(ber(&sent, &got)?);
            }
            let out = sparse_extract(&stego, &dictionary, &params, oracle.as_ref()).map_err(|e| match e {
                stegolab::Error::TruncatedStream { .. } => match report.get("ber") {
                    Some(b) => Failure::Corrupt(format!("{e} (raw ber {b})")),
                    None => Failure::Corrupt(e.to_string()),
                },
                other => other.into(),
            })?;
            report["nnz"] = json!(out.nnz);
            report["capacity_bits"] = json!(capacity(&params, stego.len() / (params.block_side * params.block_side)).0);
            (out.message, report)
        }
        Plan::Qim(_) => {
            let key = key_file(required(&a.key, "--key", a.method)?, IcaBasisKey::from_bytes)?;
            let blocks = (stego.width() / key.block_side) * (stego.height() / key.block_side);
            if blocks < 32 {
                return Err(Failure::Corrupt(format!("{blocks} blocks cannot hold a header")));
            }
            let all = ica_block_watermark_extract(&stego, &key, blocks)?;
            let mut report = json!({ "method": "ica-qim", "capacity_bits": blocks });
            if let Some(msg) = &reference {
                let sent = frame_message(msg);
                let n = sent.len().min(blocks);
                let mut got = all[..n].to_vec();
                got.resize(sent.len(), 0);
                report["ber"] = json!(ber(&sent, &got)?);
            }
            let n = announced(&all, blocks - 32)?;
            (bits_to_bytes(&all[32..32 + n]), report)
        }
    };
    write(&a.output, &message)?;
    report["message_bits"] = json!(bytes_to_bits(&message).len());
    Ok(report)
}

fn indexed_path(base: &Path, index: usize, count: usize) -> PathBuf {
    if count == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}-{index}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{index}"),
    };
    base.with_file_name(name)
}

pub fn analyze(a: &AnalyzeArgs) -> Result<Value, Failure> {
    let reference = a.reference.as_deref().map(read_image).transpose()?;
    let ref_hist = reference.as_ref().map(histogram);
    let ref_chi = ref_hist.as_ref().map(|h| chi_square_from_histogram(h, DEFAULT_MIN_EXPECTED));
    let mut images = Vec::new();
    for (i, path) in a.inputs.iter().enumerate() {
        let img = read_image(path)?;
        let h = histogram(&img);
        let chi = chi_square_from_histogram(&h, DEFAULT_MIN_EXPECTED);
        let mut entry = json!({
            "path": path.display().to_string(),
            "width": img.width(),
            "height": img.height(),
            "histogram": h.0.to_vec(),
            "distinct_levels": h.0.iter().filter(|&&c| c > 0).count(),
            "hist_change": hist_change_of(&h),
            "chi_square": match &chi {
                Ok(c) => json!({ "chi2": c.chi2, "dof": c.dof, "p_value": c.p_value }),
                Err(e) => json!({ "error": e.to_string() }),
            },
        });
        if let Some((dx, dy)) = a.cooccurrence {
            let co = cooccurrence(&img, dx, dy)?;
            entry["cooccurrence"] = json!({ "dx": dx, "dy": dy, "total": co.total() });
            if let Some(out) = &a.cooccurrence_out {
                write(&indexed_path(out, i, a.inputs.len()), co.to_csv().as_bytes())?;
            }
        }
        if let (Some(r), Some(rh), Some(rc)) = (&reference, &ref_hist, &ref_chi) {
            if !r.same_dims(&img) {
                return Err(Failure::Input(format!(
                    "{} is {}x{}, reference is {}x{}",
                    path.display(),
                    img.width(),
                    img.height(),
                    r.width(),
                    r.height()
                )));
            }
            let (dx, dy) = a.cooccurrence.unwrap_or((1, 0));
            let chi_equal = match (rc, &chi) {
                (Ok(x), Ok(y)) => json!(x.chi2.to_bits() == y.chi2.to_bits() && x.dof == y.dof),
                _ => Value::Null,
            };
            entry["versus_reference"] = json!({
                "psnr_db": psnr(r, &img)?,
                "histogram_identical": rh == &h,
                "hist_change_delta": hist_change_of(&h) as i64 - hist_change_of(rh) as i64,
                "chi2_identical": chi_equal,
                "cooccurrence_change": cooccurrence_change(r, &img, dx, dy)?,
            });
        }
        images.push(entry);
    }
    Ok(json!({ "images": images }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexed_paths() {
        let base = Path::new("/tmp/co.csv");
        assert_eq!(indexed_path(base, 0, 1), PathBuf::from("/tmp/co.csv"));
        assert_eq!(indexed_path(base, 2, 3), PathBuf::from("/tmp/co-2.csv"));
        assert_eq!(indexed_path(Path::new("co"), 1, 2), PathBuf::from("co-1"));
    }

    #[test]
    fn header_bound_is_enforced() {
        let mut bits = vec![0u8; 40];
        bits[31] = 1;
        bits[29] = 1;
        assert_eq!(announced(&bits, 8).unwrap(), 5);
        assert!(matches!(announced(&bits, 4), Err(Failure::Corrupt(_))));
    }
}
