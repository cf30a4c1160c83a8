//! Peak-and-width estimation from sample clouds.

use crate::error::{Error, Result};

/// Mode of a binned sample cloud with its full width at half maximum.
#[derive(Clone, Debug)]
pub struct HistogramEstimate {
    pub peak: f64,
    pub fwhm: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
    /// Left edge of the first bin.
    pub bin_lo: f64,
}

impl HistogramEstimate {
    /// Build from positive samples. Outliers are suppressed twice: the
    /// samples are first clipped to `[median/4, 4*median]` so the bin
    /// count stays bounded, and the FWHM is measured on the support
    /// `[peak/4, 4*peak]`.
    ///
    /// `bin_width = None` uses 1/200 of the clipped range.
    pub fn from_samples(samples: &[f64], bin_width: Option<f64>) -> Result<Self> {
        let mut finite: Vec<f64> = samples.iter().cloned().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Err(Error::NoValidPairs("histogram has no finite samples"));
        }
        finite.sort_by(f64::total_cmp);
        let median = finite[finite.len() / 2];
        if !(median > 0.0) {
            return Err(Error::InvalidParameter {
                what: "histogram samples",
                why: format!("nonpositive median {median:e}"),
            });
        }
        let lo = median / 4.0;
        let hi = median * 4.0;
        let clipped: Vec<f64> = finite
            .iter()
            .cloned()
            .filter(|&v| v >= lo && v <= hi)
            .collect();
        let bin_width = bin_width.unwrap_or((hi - lo) / 200.0);
        if !(bin_width > 0.0) {
            return Err(Error::InvalidParameter {
                what: "histogram bin width",
                why: format!("must be positive, got {bin_width}"),
            });
        }
        let n_bins = (((hi - lo) / bin_width).ceil() as usize).max(1);
        let mut counts = vec![0usize; n_bins];
        for &v in &clipped {
            let b = (((v - lo) / bin_width) as usize).min(n_bins - 1);
            counts[b] += 1;
        }
        let peak_bin = counts
            .iter()
            .enumerate()
            .max_by_key(|(_, &c)| c)
            .map(|(b, _)| b)
            .unwrap();
        let peak = lo + (peak_bin as f64 + 0.5) * bin_width;

        // FWHM on the clipped support around the peak
        let support_lo = peak / 4.0;
        let support_hi = peak * 4.0;
        let half = counts[peak_bin] as f64 / 2.0;
        let center = |b: usize| lo + (b as f64 + 0.5) * bin_width;
        let mut left = peak_bin;
        while left > 0 && counts[left - 1] as f64 >= half && center(left - 1) >= support_lo {
            left -= 1;
        }
        let mut right = peak_bin;
        while right + 1 < n_bins && counts[right + 1] as f64 >= half && center(right + 1) <= support_hi
        {
            right += 1;
        }
        let fwhm = ((right - left + 1) as f64) * bin_width;

        Ok(Self {
            peak,
            fwhm,
            bin_width,
            counts,
            bin_lo: lo,
        })
    }

    /// (bin center, count) rows for CSV export.
    pub fn rows(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .map(move |(b, &c)| (self.bin_lo + (b as f64 + 0.5) * self.bin_width, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_of_a_tight_cluster() {
        let samples: Vec<f64> = (0..1000).map(|k| 2.0 + 1e-4 * ((k % 7) as f64 - 3.0)).collect();
        let h = HistogramEstimate::from_samples(&samples, Some(1e-3)).unwrap();
        assert!((h.peak - 2.0).abs() < 2e-3, "peak {}", h.peak);
        assert!(h.fwhm >= h.bin_width);
    }

    #[test]
    fn outliers_do_not_move_the_peak() {
        let mut samples: Vec<f64> = (0..500).map(|k| 1.0 + 1e-3 * (k % 5) as f64).collect();
        samples.extend([1e6, -50.0, 1e-9, f64::NAN]);
        let h = HistogramEstimate::from_samples(&samples, Some(1e-3)).unwrap();
        assert!((h.peak - 1.0).abs() < 0.01, "peak {}", h.peak);
    }

    #[test]
    fn rejects_empty_and_nonpositive_clouds() {
        assert!(HistogramEstimate::from_samples(&[], Some(0.1)).is_err());
        assert!(HistogramEstimate::from_samples(&[-1.0, -2.0, -3.0], Some(0.1)).is_err());
    }

    #[test]
    fn fwhm_tracks_spread() {
        let narrow: Vec<f64> = (0..4000)
            .map(|k| 1.0 + 0.001 * ((k % 1000) as f64 / 1000.0 - 0.5))
            .collect();
        let wide: Vec<f64> = (0..4000)
            .map(|k| 1.0 + 0.2 * ((k % 1000) as f64 / 1000.0 - 0.5))
            .collect();
        let hn = HistogramEstimate::from_samples(&narrow, Some(1e-3)).unwrap();
        let hw = HistogramEstimate::from_samples(&wide, Some(1e-3)).unwrap();
        assert!(hw.fwhm > hn.fwhm);
    }
}
