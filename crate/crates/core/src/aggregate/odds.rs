use serde::{Deserialize, Serialize};

/// z for a two-sided 95% Wald interval.
pub const Z_95: f64 = 1.96;

/// Odds ratio of ground-truth positives inside a group versus the rest of the
/// current item set, with a Wald confidence interval on the log scale.
///
/// When any of the four counts is zero, 0.5 is added to all four
/// (Haldane–Anscombe) and `corrected` is set. An empty side has no odds ratio:
/// `value` and `ci` are `None` and the group counts as uncertain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OddsRatio {
    pub value: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub uncertain: bool,
    pub corrected: bool,
}

impl OddsRatio {
    pub const UNDEFINED: OddsRatio = OddsRatio {
        value: None,
        ci: None,
        uncertain: true,
        corrected: false,
    };

    /// `pos_in`/`neg_in`: ground-truth positives/negatives in the group;
    /// `pos_out`/`neg_out`: the same for the remaining items.
    pub fn from_counts(pos_in: usize, neg_in: usize, pos_out: usize, neg_out: usize) -> Self {
        if pos_in + neg_in == 0 || pos_out + neg_out == 0 {
            return Self::UNDEFINED;
        }
        let corrected = pos_in == 0 || neg_in == 0 || pos_out == 0 || neg_out == 0;
        let pad = if corrected { 0.5 } else { 0.0 };
        let [pe, ne, pt, nt] = [pos_in, neg_in, pos_out, neg_out].map(|c| c as f64 + pad);

        let log_or = (pe / ne).ln() - (pt / nt).ln();
        let half_width = Z_95 * (1.0 / pe + 1.0 / ne + 1.0 / pt + 1.0 / nt).sqrt();
        let lo = (log_or - half_width).exp();
        let hi = (log_or + half_width).exp();
        OddsRatio {
            value: Some(log_or.exp()),
            ci: Some((lo, hi)),
            uncertain: lo <= 1.0 && 1.0 <= hi,
            corrected,
        }
    }

    pub fn uncertainty(&self) -> Option<f64> {
        self.value.map(uncertainty)
    }
}

/// Closeness of an odds ratio to one: `-|ln(or)|`, maximal (zero) at 1.
pub fn uncertainty(odds_ratio: f64) -> f64 {
    -odds_ratio.ln().abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plug_in_value() {
        // (5/5) / (25/75) = 3
        let or = OddsRatio::from_counts(5, 5, 25, 75);
        assert!((or.value.unwrap() - 3.0).abs() < 1e-12);
        assert!(!or.corrected);
    }

    #[test]
    fn balanced_hundreds() {
        // exp(+-1.96 * sqrt(4 / 100)) = exp(+-0.392)
        let or = OddsRatio::from_counts(100, 100, 100, 100);
        assert!((or.value.unwrap() - 1.0).abs() < 1e-12);
        let (lo, hi) = or.ci.unwrap();
        assert!((lo - 0.675_704_113_960_626).abs() < 1e-9, "{lo}");
        assert!((hi - 1.479_937_711_402_288_5).abs() < 1e-9, "{hi}");
        assert_eq!(format!("{lo:.4} {hi:.4}"), "0.6757 1.4799");
        assert!(or.uncertain);
    }

    #[test]
    fn zero_cell_is_corrected() {
        // (0.5 / 10.5) / (50.5 / 50.5) = 1 / 21
        let or = OddsRatio::from_counts(0, 10, 50, 50);
        assert!(or.corrected);
        let v = or.value.unwrap();
        assert!(v.is_finite() && v < 1.0);
        assert!((v - 1.0 / 21.0).abs() < 1e-12);
    }

    #[test]
    fn empty_remainder_is_undefined() {
        let or = OddsRatio::from_counts(3, 4, 0, 0);
        assert_eq!(or, OddsRatio::UNDEFINED);
        assert!(or.uncertain);
        assert_eq!(or.uncertainty(), None);
    }

    #[test]
    fn uncertainty_values() {
        assert_eq!(uncertainty(1.0), 0.0);
        assert!((uncertainty(3.0) + 3f64.ln()).abs() < 1e-15);
        assert!((uncertainty(3.0) - -1.0986).abs() < 1e-4);
        assert!((uncertainty(1.0 / 3.0) - uncertainty(3.0)).abs() < 1e-15);
    }
}
