//! CSV rendering for experiment results. All floats are printed with 6
//! significant digits; rendering is a pure function of the records, so two
//! runs that produce the same numbers produce the same bytes.

use super::{McSummary, MethodRecord};

/// Formats a float with 6 significant digits (`%.6g`-style): positional
/// notation in a moderate range, scientific outside it, trailing zeros
/// trimmed. NaN renders as `NA` (failed cells).
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "NA".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let a = x.abs();
    let e = a.log10().floor() as i32;
    if !(-4..6).contains(&e) {
        let s = format!("{:.5e}", x);
        let (mant, exp) = s.split_once('e').expect("exponent format");
        let mant = trim_trailing_zeros(mant);
        format!("{mant}e{exp}")
    } else {
        let decimals = (5 - e).max(0) as usize;
        trim_trailing_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_trailing_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `rep,method,m,dist,l2_error,rounds,comm_values`, one row per
/// (m, replication, method) in deterministic order.
pub fn render_estimation_csv(records: &[MethodRecord], dist_tag: &str) -> String {
    let mut out = String::from("rep,method,m,dist,l2_error,rounds,comm_values\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.rep,
            r.method.name(),
            r.m,
            dist_tag,
            fmt_sig(r.l2_error),
            r.rounds,
            r.comm_values
        ));
    }
    out
}

/// `method,m,dist,coverage_mean,coverage_sd,width_mean,width_sd` for the
/// methods that produce confidence intervals. The sd columns are the standard
/// deviation across replications of the per-replication value (coverage
/// proportion or mean width over slope coordinates), as noted in the header
/// comment.
pub fn render_coverage_csv(summaries: &[McSummary], dist_tag: &str) -> String {
    let mut out = String::from(
        "# sd columns: standard deviation across replications of the per-replication \
         coverage proportion / mean width over slope coordinates\n\
         method,m,dist,coverage_mean,coverage_sd,width_mean,width_sd\n",
    );
    for s in summaries {
        let (Some(cm), Some(cs), Some(wm), Some(ws)) =
            (s.coverage_mean, s.coverage_sd, s.width_mean, s.width_sd)
        else {
            continue;
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            s.method.name(),
            s.m,
            dist_tag,
            fmt_sig(cm),
            fmt_sig(cs),
            fmt_sig(wm),
            fmt_sig(ws)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(-1.5), "-1.5");
        assert_eq!(fmt_sig(0.0223456789), "0.0223457");
        assert_eq!(fmt_sig(1234567.0), "1.23457e6");
        assert_eq!(fmt_sig(0.00001234567), "1.23457e-5");
        assert_eq!(fmt_sig(0.000123456), "0.000123456");
        assert_eq!(fmt_sig(123456.0), "123456");
        assert_eq!(fmt_sig(f64::NAN), "NA");
        assert_eq!(fmt_sig(1.959964), "1.95996");
    }
}
