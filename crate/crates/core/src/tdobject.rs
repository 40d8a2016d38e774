//! Time-by-distribution surfaces, time-varying L-moment curves, diurnal
//! curves and scalar activity summaries for one subject.
//!
//! A window centred at `t` with half-width `h` collects the slots whose start
//! minute lies in `[t - h, t + h)`, pooled across all valid days.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{l_moments_sorted, quantile_function_sorted, sorted_copy, DistributionError, QuantileFunction};
use crate::grid::Grid;
use crate::ingest::{SubjectSeries, DEFAULT_MIN_DAY_FRACTION, MINUTES_PER_DAY};
use crate::linalg::Mat;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TdError {
    #[error("subject `{subject}`: window at t = {t} pools no observations")]
    EmptyWindow { subject: String, t: f64 },
    #[error("subject `{subject}`: window at t = {t} pools {count} observations, order {order} needs more")]
    WindowTooSmall {
        subject: String,
        t: f64,
        count: usize,
        order: usize,
    },
    #[error("subject `{0}` has no valid days")]
    NoValidDays(String),
    #[error("subject `{0}` has no observed values")]
    AllMissing(String),
    #[error("half-width must be at least 1 minute")]
    BadHalfWidth,
    #[error("time grid point {0} outside [0, 1440)")]
    TimeOutOfRange(f64),
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("csv output failed: {0}")]
    Output(String),
}

impl TdError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::EmptyWindow { .. } => "tdobject.empty_window",
            Self::WindowTooSmall { .. } => "tdobject.window_too_small",
            Self::NoValidDays(_) => "tdobject.no_valid_days",
            Self::AllMissing(_) => "tdobject.all_missing",
            Self::BadHalfWidth => "tdobject.bad_half_width",
            Self::TimeOutOfRange(_) => "tdobject.time_out_of_range",
            Self::Distribution(e) => e.code(),
            Self::Output(_) => "tdobject.output",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Windows are intersected with the day.
    #[default]
    Truncate,
    /// Windows wrap around midnight.
    Wrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowOptions {
    pub half_width: usize,
    pub boundary: BoundaryPolicy,
    pub min_day_fraction: f64,
}

impl Default for WindowOptions {
    fn default() -> Self {
        Self {
            half_width: 5,
            boundary: BoundaryPolicy::Truncate,
            min_day_fraction: DEFAULT_MIN_DAY_FRACTION,
        }
    }
}

/// `Q(t, p)` on a time grid times a quantile-level grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TdSurface<T> {
    pub subject_id: String,
    pub t_grid: Grid<T>,
    pub p_grid: Grid<T>,
    /// `|t_grid| x |p_grid|`, one quantile function per row.
    pub values: Mat<T>,
    pub half_width: usize,
    pub pooled_counts: Vec<usize>,
}

impl<T: Real> TdSurface<T> {
    /// `∫∫ Q(t, p) dp dt` under the grid quadratures.
    pub fn integral(&self) -> T {
        let row_int: Vec<T> = (0..self.t_grid.len())
            .map(|i| self.p_grid.integrate(self.values.row(i)))
            .collect();
        self.t_grid.integrate(&row_int)
    }
}

/// `L_r(t)` for orders `1..=R`.
#[derive(Debug, Clone, PartialEq)]
pub struct LMomentCurveSet<T> {
    pub subject_id: String,
    pub t_grid: Grid<T>,
    /// `R x |t_grid|`; row `r - 1` holds order `r`.
    pub curves: Mat<T>,
    pub half_width: usize,
}

impl<T: Real> LMomentCurveSet<T> {
    pub fn max_order(&self) -> usize {
        self.curves.rows()
    }

    pub fn order(&self, r: usize) -> &[T] {
        self.curves.row(r - 1)
    }
}

/// Per-slot mean across days.
#[derive(Debug, Clone, PartialEq)]
pub struct DiurnalCurve<T> {
    pub subject_id: String,
    pub t_grid: Grid<T>,
    pub values: Vec<T>,
    /// Slots observed on no valid day, filled by linear interpolation.
    pub interpolated: Vec<bool>,
}

fn window_slots(t: i64, h: i64, width: usize, boundary: BoundaryPolicy) -> Vec<usize> {
    let slots = (MINUTES_PER_DAY / width) as i64;
    let w = width as i64;
    let lo = t - h;
    let hi = t + h;
    let mut out = Vec::new();
    match boundary {
        BoundaryPolicy::Truncate => {
            // slot s starts at s*w; need lo <= s*w < hi
            let first = if lo <= 0 { 0 } else { (lo + w - 1) / w };
            let mut s = first;
            while s < slots && s * w < hi {
                out.push(s as usize);
                s += 1;
            }
        }
        BoundaryPolicy::Wrap => {
            let span = (hi - lo).min(MINUTES_PER_DAY as i64);
            let day = MINUTES_PER_DAY as i64;
            for m in lo..lo + span {
                let mm = m.rem_euclid(day);
                if mm % w == 0 {
                    out.push((mm / w) as usize);
                }
            }
            out.sort_unstable();
            out.dedup();
        }
    }
    out
}

fn check_time_grid<T: Real>(t_grid: &Grid<T>) -> Result<(), TdError> {
    let day = T::from_usize_lossy(MINUTES_PER_DAY);
    if let Some(&t) = t_grid.points().iter().find(|&&t| t < T::zero() || t >= day) {
        return Err(TdError::TimeOutOfRange(t.to_f64_lossy()));
    }
    Ok(())
}

/// Sorted pooled samples, one per time-grid point.
fn pooled_windows<T: Real>(series: &SubjectSeries<T>, t_grid: &Grid<T>, opts: &WindowOptions) -> Result<Vec<Vec<T>>, TdError> {
    if opts.half_width == 0 {
        return Err(TdError::BadHalfWidth);
    }
    check_time_grid(t_grid)?;
    let days: Vec<_> = series.valid_days(opts.min_day_fraction).collect();
    if days.is_empty() {
        return Err(TdError::NoValidDays(series.subject_id.clone()));
    }
    let width = series.epoch_width();
    let h = opts.half_width as i64;
    t_grid
        .points()
        .iter()
        .map(|&t| {
            let tm = t.round().to_i64().unwrap_or(0);
            let slots = window_slots(tm, h, width, opts.boundary);
            let mut pool = Vec::with_capacity(slots.len() * days.len());
            for d in &days {
                pool.extend(slots.iter().filter_map(|&s| d.get(s)));
            }
            if pool.is_empty() {
                return Err(TdError::EmptyWindow {
                    subject: series.subject_id.clone(),
                    t: t.to_f64_lossy(),
                });
            }
            pool.sort_by(|a, b| a.partial_cmp(b).expect("finite activity"));
            Ok(pool)
        })
        .collect()
}

/// Builds the time-by-distribution surface of one subject.
pub fn td_surface<T: Real>(series: &SubjectSeries<T>, t_grid: &Grid<T>, p_grid: &Grid<T>, opts: &WindowOptions) -> Result<TdSurface<T>, TdError> {
    let windows = pooled_windows(series, t_grid, opts)?;
    let mut values = Mat::zeros(t_grid.len(), p_grid.len());
    let mut pooled_counts = Vec::with_capacity(windows.len());
    for (i, pool) in windows.iter().enumerate() {
        let q = quantile_function_sorted(pool, p_grid)?;
        values.row_mut(i).copy_from_slice(&q.values);
        pooled_counts.push(pool.len());
    }
    Ok(TdSurface {
        subject_id: series.subject_id.clone(),
        t_grid: t_grid.clone(),
        p_grid: p_grid.clone(),
        values,
        half_width: opts.half_width,
        pooled_counts,
    })
}

/// Direct L-moments of every pooled window, orders `1..=max_order`.
pub fn time_varying_l_moments<T: Real>(
    series: &SubjectSeries<T>,
    t_grid: &Grid<T>,
    max_order: usize,
    opts: &WindowOptions,
) -> Result<LMomentCurveSet<T>, TdError> {
    if max_order == 0 {
        return Err(TdError::Distribution(DistributionError::ZeroOrder));
    }
    let windows = pooled_windows(series, t_grid, opts)?;
    let mut curves = Mat::zeros(max_order, t_grid.len());
    for (i, pool) in windows.iter().enumerate() {
        if pool.len() < max_order {
            return Err(TdError::WindowTooSmall {
                subject: series.subject_id.clone(),
                t: t_grid.points()[i].to_f64_lossy(),
                count: pool.len(),
                order: max_order,
            });
        }
        let lm = l_moments_sorted(pool, max_order);
        for (r, &v) in lm.iter().enumerate() {
            // L2 is a mean absolute difference; clip rounding below zero
            curves[(r, i)] = if r == 1 { v.max(T::zero()) } else { v };
        }
    }
    Ok(LMomentCurveSet {
        subject_id: series.subject_id.clone(),
        t_grid: t_grid.clone(),
        curves,
        half_width: opts.half_width,
    })
}

/// Per-slot mean over valid days on the series' own slot grid. Slots seen on
/// no valid day are interpolated from their neighbours and flagged.
pub fn diurnal_curve<T: Real>(series: &SubjectSeries<T>, min_day_fraction: f64) -> Result<DiurnalCurve<T>, TdError> {
    let days: Vec<_> = series.valid_days(min_day_fraction).collect();
    if days.is_empty() {
        return Err(TdError::NoValidDays(series.subject_id.clone()));
    }
    let slots = series.slots_per_day();
    let mut values = vec![T::zero(); slots];
    let mut have = vec![false; slots];
    for (s, (v, h)) in values.iter_mut().zip(have.iter_mut()).enumerate() {
        let mut sum = T::zero();
        let mut cnt = 0usize;
        for d in &days {
            if let Some(x) = d.get(s) {
                sum += x;
                cnt += 1;
            }
        }
        if cnt > 0 {
            *v = sum / T::from_usize_lossy(cnt);
            *h = true;
        }
    }
    let known: Vec<usize> = (0..slots).filter(|&s| have[s]).collect();
    if known.is_empty() {
        return Err(TdError::AllMissing(series.subject_id.clone()));
    }
    let mut interpolated = vec![false; slots];
    for s in 0..slots {
        if have[s] {
            continue;
        }
        interpolated[s] = true;
        let next = known.partition_point(|&k| k < s);
        values[s] = match (next.checked_sub(1).map(|i| known[i]), known.get(next).copied()) {
            (Some(a), Some(b)) => {
                let w = T::from_usize_lossy(s - a) / T::from_usize_lossy(b - a);
                values[a] * (T::one() - w) + values[b] * w
            }
            (Some(a), None) => values[a],
            (None, Some(b)) => values[b],
            (None, None) => unreachable!("at least one known slot"),
        };
    }
    let t_grid = Grid::time_of_day(series.epoch_width()).map_err(|e| TdError::Output(e.to_string()))?;
    Ok(DiurnalCurve {
        subject_id: series.subject_id.clone(),
        t_grid,
        values,
        interpolated,
    })
}

/// Grand mean over every observed value on valid days.
pub fn subject_mean<T: Real>(series: &SubjectSeries<T>, min_day_fraction: f64) -> Result<T, TdError> {
    let mut sum = T::zero();
    let mut cnt = 0usize;
    for d in series.valid_days(min_day_fraction) {
        for s in 0..d.len() {
            if let Some(v) = d.get(s) {
                sum += v;
                cnt += 1;
            }
        }
    }
    if cnt == 0 {
        return Err(TdError::AllMissing(series.subject_id.clone()));
    }
    Ok(sum / T::from_usize_lossy(cnt))
}

/// Quantile function of all observed values on valid days.
pub fn subject_quantile_function<T: Real>(series: &SubjectSeries<T>, p_grid: &Grid<T>, min_day_fraction: f64) -> Result<QuantileFunction<T>, TdError> {
    let pool: Vec<T> = series
        .valid_days(min_day_fraction)
        .flat_map(|d| (0..d.len()).filter_map(move |s| d.get(s)))
        .collect();
    if pool.is_empty() {
        return Err(TdError::AllMissing(series.subject_id.clone()));
    }
    let sorted = sorted_copy(&pool)?;
    Ok(quantile_function_sorted(&sorted, p_grid)?)
}

fn csv_err(e: impl std::fmt::Display) -> TdError {
    TdError::Output(e.to_string())
}

/// Long format `subject_id,t,p,value`.
pub fn write_surfaces_long<T: Real, W: Write>(surfaces: &[TdSurface<T>], out: W) -> Result<(), TdError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject_id", "t", "p", "value"]).map_err(csv_err)?;
    for s in surfaces {
        for (i, &t) in s.t_grid.points().iter().enumerate() {
            for (j, &p) in s.p_grid.points().iter().enumerate() {
                w.write_record([
                    s.subject_id.as_str(),
                    &format!("{t}"),
                    &format!("{p}"),
                    &format!("{}", s.values[(i, j)]),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(csv_err)
}

/// Long format `subject_id,t,order,value`.
pub fn write_lmoments_long<T: Real, W: Write>(sets: &[LMomentCurveSet<T>], out: W) -> Result<(), TdError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["subject_id", "t", "order", "value"]).map_err(csv_err)?;
    for s in sets {
        for r in 1..=s.max_order() {
            for (i, &t) in s.t_grid.points().iter().enumerate() {
                w.write_record([
                    s.subject_id.as_str(),
                    &format!("{t}"),
                    &r.to_string(),
                    &format!("{}", s.curves[(r - 1, i)]),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(csv_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{l_moment_via_quantile, LegendreBasis};
    use crate::ingest::{aggregate_epochs, ActivityPanel, DaySeries};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn series(days: Vec<Vec<f64>>) -> SubjectSeries<f64> {
        SubjectSeries::new(
            "s",
            days.into_iter()
                .enumerate()
                .map(|(j, v)| DaySeries::new(j as i64, v).unwrap())
                .collect(),
        )
    }

    fn random_series(rng: &mut ChaCha8Rng, n_days: usize) -> SubjectSeries<f64> {
        series(
            (0..n_days)
                .map(|_| {
                    (0..1440)
                        .map(|m| {
                            if rng.random::<f64>() < 0.3 {
                                0.0
                            } else {
                                let base = 1.0 + (m as f64 / 1440.0 * std::f64::consts::TAU).sin().abs() * 3.0;
                                base * rng.random::<f64>() * 10.0
                            }
                        })
                        .collect()
                })
                .collect(),
        )
    }

    #[test]
    fn window_membership() {
        assert_eq!(window_slots(5, 5, 1, BoundaryPolicy::Truncate), (0..10).collect::<Vec<_>>());
        assert_eq!(window_slots(0, 5, 1, BoundaryPolicy::Truncate), (0..5).collect::<Vec<_>>());
        assert_eq!(window_slots(1439, 2, 1, BoundaryPolicy::Truncate), vec![1437, 1438, 1439]);
        assert_eq!(window_slots(0, 2, 1, BoundaryPolicy::Wrap), vec![0, 1, 1438, 1439]);
        assert_eq!(window_slots(15, 5, 10, BoundaryPolicy::Truncate), vec![1]);
    }

    #[test]
    fn constant_series_gives_constant_objects() {
        let s = series(vec![vec![3.0; 1440]; 2]);
        let tg = Grid::time_of_day(10).unwrap();
        let pg = Grid::quantile_levels(99).unwrap();
        let surf = td_surface(&s, &tg, &pg, &WindowOptions::default()).unwrap();
        assert!(surf.values.as_slice().iter().all(|&v| v == 3.0));
        assert!(surf.pooled_counts.iter().all(|&c| c == 20));
        let lm = time_varying_l_moments(&s, &tg, 4, &WindowOptions::default()).unwrap();
        assert!(lm.order(1).iter().all(|&v| (v - 3.0).abs() < 1e-12));
        for r in 2..=4 {
            assert!(lm.order(r).iter().all(|&v| v.abs() < 1e-12));
        }
        assert_eq!(subject_mean(&s, 0.8).unwrap(), 3.0);
    }

    #[test]
    fn full_day_window_matches_whole_day_quantiles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_series(&mut rng, 1);
        let tg = Grid::trapezoid(vec![100.0, 720.0, 1300.0], 0.0, 1440.0).unwrap();
        let pg = Grid::quantile_levels(19).unwrap();
        let opts = WindowOptions {
            half_width: 1440,
            ..Default::default()
        };
        let surf = td_surface(&s, &tg, &pg, &opts).unwrap();
        let whole = subject_quantile_function(&s, &pg, 0.8).unwrap();
        for i in 0..3 {
            assert_eq!(surf.values.row(i), whole.values.as_slice());
        }
    }

    #[test]
    fn pooled_cell_uses_parzen_on_multiset() {
        let mut d1 = vec![0.0; 1440];
        let mut d2 = vec![0.0; 1440];
        // window at t = 101, h = 1 covers minutes 100 and 101
        d1[100] = 4.0;
        d1[101] = 1.0;
        d2[100] = 3.0;
        d2[101] = 2.0;
        let s = series(vec![d1, d2]);
        let tg = Grid::trapezoid(vec![101.0], 0.0, 1440.0).unwrap();
        let pg = Grid::trapezoid(vec![0.5], 0.0, 1.0).unwrap();
        let opts = WindowOptions {
            half_width: 1,
            ..Default::default()
        };
        let surf = td_surface(&s, &tg, &pg, &opts).unwrap();
        assert_eq!(surf.values[(0, 0)], 2.5);
        assert_eq!(surf.pooled_counts, vec![4]);
        let lm = time_varying_l_moments(&s, &tg, 2, &opts).unwrap();
        assert_abs_diff_eq!(lm.order(2)[0], 5.0 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn empty_window_reports_t() {
        let mut obs = vec![true; 1440];
        for o in obs.iter_mut().take(20) {
            *o = false;
        }
        let day = DaySeries::with_mask(0, vec![1.0; 1440], obs).unwrap();
        let s = SubjectSeries::new("x", vec![day]);
        let tg = Grid::time_of_day(10).unwrap();
        let pg = Grid::quantile_levels(9).unwrap();
        let err = td_surface(&s, &tg, &pg, &WindowOptions::default()).unwrap_err();
        assert_eq!(
            err,
            TdError::EmptyWindow {
                subject: "x".into(),
                t: 5.0
            }
        );
        let lm_err = time_varying_l_moments(&s, &tg, 2, &WindowOptions::default()).unwrap_err();
        assert!(matches!(lm_err, TdError::EmptyWindow { .. }));
    }

    #[test]
    fn order_one_curve_equals_epoch_diurnal_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_series(&mut rng, 3);
        let tg = Grid::time_of_day(10).unwrap();
        let lm = time_varying_l_moments(&s, &tg, 4, &WindowOptions::default()).unwrap();
        let panel = ActivityPanel::new(vec![s.clone()], 1).unwrap();
        let agg = aggregate_epochs(&panel, 10).unwrap();
        let diurnal = diurnal_curve(&agg.subjects()[0], 0.8).unwrap();
        assert_eq!(diurnal.t_grid.points(), tg.points());
        for (a, b) in lm.order(1).iter().zip(&diurnal.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert!(lm.order(2).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn diurnal_curve_examples() {
        let one = series(vec![(0..1440).map(|m| m as f64).collect()]);
        let c = diurnal_curve(&one, 0.8).unwrap();
        assert_eq!(c.values[17], 17.0);

        let two = series(vec![vec![0.0; 1440], vec![2.0; 1440]]);
        assert!(diurnal_curve(&two, 0.8).unwrap().values.iter().all(|&v| v == 1.0));

        // three days; slot 7 missing on the second day, slot 9 missing everywhere
        let mk = |val: f64, miss: &[usize]| {
            let mut obs = vec![true; 1440];
            for &m in miss {
                obs[m] = false;
            }
            DaySeries::with_mask(0, vec![val; 1440], obs).unwrap()
        };
        let s = SubjectSeries::new("t", vec![mk(1.0, &[9]), mk(4.0, &[7, 9]), mk(7.0, &[9])]);
        let c = diurnal_curve(&s, 0.8).unwrap();
        assert_eq!(c.values[7], 4.0); // (1 + 7) / 2
        assert_eq!(c.values[6], 4.0);
        assert!(c.interpolated[9] && !c.interpolated[7]);
        assert_eq!(c.values[9], 4.0);
    }

    #[test]
    fn subject_mean_examples() {
        let mut d1 = vec![0.0; 1440];
        let mut d2 = vec![0.0; 1440];
        let mut o1 = vec![false; 1440];
        let mut o2 = vec![false; 1440];
        for (k, v) in [1.0, 2.0, 3.0].iter().enumerate() {
            d1[k] = *v;
            o1[k] = true;
        }
        for (k, v) in [3.0, 4.0, 5.0].iter().enumerate() {
            d2[k] = *v;
            o2[k] = true;
        }
        let s = SubjectSeries::new(
            "m",
            vec![
                DaySeries::with_mask(0, d1, o1).unwrap(),
                DaySeries::with_mask(1, d2, o2).unwrap(),
            ],
        );
        assert_eq!(subject_mean(&s, 0.0).unwrap(), 3.0);
        assert_eq!(subject_mean(&s, 0.8), Err(TdError::AllMissing("m".into())));
    }

    #[test]
    fn subject_mean_matches_surface_aggregate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_series(&mut rng, 7);
        let tg = Grid::time_of_day(10).unwrap();
        let pg = Grid::quantile_levels(199).unwrap();
        let surf = td_surface(&s, &tg, &pg, &WindowOptions::default()).unwrap();
        let mean = subject_mean(&s, 0.8).unwrap();
        let agg = surf.integral() / 1440.0;
        assert!((agg - mean).abs() < 1e-2 * (1.0 + mean.abs()), "{agg} vs {mean}");
    }

    #[test]
    fn surface_rows_project_to_l_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_series(&mut rng, 7);
        let tg = Grid::time_of_day(240).unwrap();
        let pg = Grid::quantile_levels(1001).unwrap();
        // 2h = 80 minutes x 7 days = 560 pooled observations per window
        let opts = WindowOptions {
            half_width: 40,
            ..Default::default()
        };
        let surf = td_surface(&s, &tg, &pg, &opts).unwrap();
        let lm = time_varying_l_moments(&s, &tg, 4, &opts).unwrap();
        let basis = LegendreBasis::new(3);
        for i in 0..tg.len() {
            assert!(surf.pooled_counts[i] >= 500);
            let q = QuantileFunction {
                p_grid: pg.clone(),
                values: surf.values.row(i).to_vec(),
                sample_size: surf.pooled_counts[i],
            };
            for r in 1..=4 {
                let via = l_moment_via_quantile(&q, &basis, r).unwrap();
                let direct = lm.order(r)[i];
                assert!((via - direct).abs() <= 0.02 * (1.0 + direct.abs()), "r={r} {via} {direct}");
            }
        }
    }

    #[test]
    fn long_exports_have_headers() {
        let s = series(vec![vec![1.0; 1440]]);
        let tg = Grid::time_of_day(720).unwrap();
        let pg = Grid::trapezoid(vec![0.25, 0.75], 0.0, 1.0).unwrap();
        let surf = td_surface(&s, &tg, &pg, &WindowOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_surfaces_long(&[surf], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("subject_id,t,p,value"));
        assert_eq!(text.lines().count(), 5);
        let lm = time_varying_l_moments(&s, &tg, 2, &WindowOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_lmoments_long(&[lm], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("subject_id,t,order,value\n"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn rows_monotone_and_shift_equivariant(seed in 0u64..1000, shift in 0.0f64..50.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = random_series(&mut rng, 2);
                let tg = Grid::time_of_day(60).unwrap();
                let pg = Grid::quantile_levels(49).unwrap();
                let opts = WindowOptions { half_width: 15, ..Default::default() };
                let a = td_surface(&s, &tg, &pg, &opts).unwrap();
                for i in 0..tg.len() {
                    prop_assert!(a.values.row(i).windows(2).all(|w| w[0] <= w[1]));
                }
                let shifted = s.map_values(|v| v + shift);
                let b = td_surface(&shifted, &tg, &pg, &opts).unwrap();
                for (x, y) in a.values.as_slice().iter().zip(b.values.as_slice()) {
                    prop_assert!((y - x - shift).abs() < 1e-9);
                }
                let la = time_varying_l_moments(&s, &tg, 4, &opts).unwrap();
                let lb = time_varying_l_moments(&shifted, &tg, 4, &opts).unwrap();
                for i in 0..tg.len() {
                    prop_assert!((lb.order(1)[i] - la.order(1)[i] - shift).abs() < 1e-9);
                    for r in 2..=4 {
                        prop_assert!((lb.order(r)[i] - la.order(r)[i]).abs() < 1e-8);
                    }
                }
            }

            #[test]
            fn p_mean_tracks_window_mean(seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let s = random_series(&mut rng, 7);
                let tg = Grid::time_of_day(120).unwrap();
                let pg = Grid::quantile_levels(99).unwrap();
                let opts = WindowOptions { half_width: 30, ..Default::default() };
                let surf = td_surface(&s, &tg, &pg, &opts).unwrap();
                let lm = time_varying_l_moments(&s, &tg, 1, &opts).unwrap();
                for i in 0..tg.len() {
                    let m = pg.integrate(surf.values.row(i));
                    let wm = lm.order(1)[i];
                    prop_assert!((m - wm).abs() <= 1e-2 * (1.0 + wm.abs()), "{} vs {}", m, wm);
                }
            }
        }
    }
}
