//! CSV and JSON emission. Floats carry 12 significant digits; files are
//! written to a temporary sibling and renamed into place.

use std::io::Write;
use std::path::Path;

use crate::darkstate::DarkState;
use crate::dynamics::TimeSeries;

pub const TIMESERIES_SCHEMA: &str = "darkmirror.timeseries/1";
pub const TIMESERIES_HEADER: &str = "t,fidelity,photon,phonon,trace_error,tail_population";

/// Formats `x` with 12 significant digits; positional when the exponent is
/// moderate, scientific otherwise.
pub fn fmt12(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.11e}")
    }
}

pub fn timeseries_csv(series: &TimeSeries) -> String {
    let mut out = String::with_capacity(64 * (series.samples.len() + 1));
    out.push_str(TIMESERIES_HEADER);
    out.push('\n');
    for s in &series.samples {
        let fields = [
            s.t,
            s.fidelity,
            s.photon,
            s.phonon,
            s.trace_error,
            s.tail_population,
        ];
        let row: Vec<String> = fields.iter().map(|&v| fmt12(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn gn_csv(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("N,g_N\n");
    for (n, g) in rows {
        out.push_str(&format!("{n},{g:.12}\n"));
    }
    out
}

/// `p,beta,probability` rows (exactly vanishing amplitudes omitted) and a
/// trailing `# summary` comment line.
pub fn darkstate_csv(ds: &DarkState) -> String {
    let mut out = String::from("p,beta,probability\n");
    for (p, (b, prob)) in ds.beta.iter().zip(ds.probabilities()).enumerate() {
        if *b == 0.0 {
            continue;
        }
        out.push_str(&format!("{p},{},{}\n", fmt12(*b), fmt12(prob)));
    }
    let stats = ds.statistics();
    out.push_str(&format!(
        "# summary: mean={},variance={},fano={},norm_c_sq={}\n",
        fmt12(stats.mean),
        fmt12(stats.variance),
        stats.fano.map(fmt12).unwrap_or_default(),
        fmt12(ds.norm_c * ds.norm_c)
    ));
    out
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
