//! Registration evaluation: Dice overlap, 95th-percentile Hausdorff distance
//! in millimetres, folding fraction and Jacobian-determinant spread.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{coords, offset, Dims, LabelMap, Spacing};
use crate::warp::{jacobian_determinant, DisplacementField};

fn same_dims(x: &LabelMap, y: &LabelMap) -> Result<()> {
    if x.dims() != y.dims() {
        return Err(Error::DimsMismatch(x.dims(), y.dims()));
    }
    Ok(())
}

fn dice_of(a: impl Iterator<Item = (bool, bool)>) -> f64 {
    let (mut inter, mut total) = (0usize, 0usize);
    for (p, q) in a {
        inter += (p && q) as usize;
        total += p as usize + q as usize;
    }
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

/// `2|X ∩ Y| / (|X| + |Y|)` for one label; 1 when both masks are empty.
pub fn dsc(x: &LabelMap, y: &LabelMap, label: u32) -> Result<f64> {
    same_dims(x, y)?;
    Ok(dice_of(
        x.labels()
            .iter()
            .zip(y.labels())
            .map(|(&a, &b)| (a == label, b == label)),
    ))
}

fn foreground_union(x: &LabelMap, y: &LabelMap) -> Vec<u32> {
    let mut s: Vec<u32> = x.foreground().chain(y.foreground()).collect();
    s.sort_unstable();
    s.dedup();
    s
}

/// `(overall, avg)`: Dice of the union of all foreground labels, and the
/// unweighted mean of per-label Dice over foreground labels present in either map.
pub fn overall_and_avg_dsc(x: &LabelMap, y: &LabelMap) -> Result<(f64, f64)> {
    same_dims(x, y)?;
    let labels = foreground_union(x, y);
    if labels.is_empty() {
        return Err(Error::NoForeground);
    }
    let overall = dice_of(x.labels().iter().zip(y.labels()).map(|(&a, &b)| (a != 0, b != 0)));
    let sum: f64 = labels.iter().map(|&l| dsc(x, y, l)).sum::<Result<f64>>()?;
    Ok((overall, sum / labels.len() as f64))
}

/// Mask voxels with at least one 6-neighbour outside the mask; voxels on the
/// grid edge always count.
pub fn boundary_voxels(mask: &[bool], dims: Dims) -> Vec<[usize; 3]> {
    (0..mask.len())
        .filter(|&i| mask[i])
        .filter_map(|i| {
            let c = coords(dims, i);
            let edge = (0..3).any(|a| c[a] == 0 || c[a] + 1 == dims[a]);
            let exposed = edge
                || (0..3).any(|a| {
                    let mut lo = c;
                    lo[a] -= 1;
                    let mut hi = c;
                    hi[a] += 1;
                    !mask[offset(dims, lo[0], lo[1], lo[2])] || !mask[offset(dims, hi[0], hi[1], hi[2])]
                });
            exposed.then_some(c)
        })
        .collect()
}

fn directed(from: &[[usize; 3]], to: &[[usize; 3]], spacing: Spacing) -> Vec<f64> {
    from.par_iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    (0..3)
                        .map(|a| {
                            let d = (p[a] as f64 - q[a] as f64) * spacing[a];
                            d * d
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Inclusive linear-interpolation percentile, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Both directed boundary-to-boundary distance sets, concatenated.
fn surface_distances(x: &LabelMap, y: &LabelMap, label: u32, spacing: Spacing) -> Result<Vec<f64>> {
    same_dims(x, y)?;
    crate::volume::check_spacing(spacing)?;
    let dims = x.dims();
    let bx = boundary_voxels(&x.mask(label), dims);
    let by = boundary_voxels(&y.mask(label), dims);
    if bx.is_empty() || by.is_empty() {
        return Err(Error::EmptyMask(label));
    }
    let mut d = directed(&bx, &by, spacing);
    d.extend(directed(&by, &bx, spacing));
    Ok(d)
}

/// 95th-percentile symmetric surface distance in millimetres.
pub fn hd95(x: &LabelMap, y: &LabelMap, label: u32, spacing: Spacing) -> Result<f64> {
    surface_distances(x, y, label, spacing).map(|d| percentile(&d, 0.95))
}

/// Classical (maximum) Hausdorff distance on the same boundary sets.
pub fn hausdorff(x: &LabelMap, y: &LabelMap, label: u32, spacing: Spacing) -> Result<f64> {
    surface_distances(x, y, label, spacing).map(|d| d.into_iter().fold(0.0, f64::max))
}

/// Percentage of voxels with `det(I + ∇u) <= 0`.
pub fn folding_fraction(f: &DisplacementField) -> Result<f64> {
    let j = jacobian_determinant(f)?;
    let folded = j.data().iter().filter(|&&d| d <= 0.0).count();
    Ok(100.0 * folded as f64 / j.len() as f64)
}

/// Standard deviation with divisor `N`.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Population std of the Jacobian determinant. By default the one-voxel
/// boundary ring (one-sided differences) is excluded; when the interior is
/// empty the whole grid is used.
pub fn jacobian_std(f: &DisplacementField, include_boundary: bool) -> Result<f64> {
    let j = jacobian_determinant(f)?;
    let dims = j.dims();
    let interior = dims.iter().all(|&n| n >= 3);
    let vals: Vec<f64> = if include_boundary || !interior {
        j.data().to_vec()
    } else {
        j.data()
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let c = coords(dims, *i);
                (0..3).all(|a| c[a] > 0 && c[a] + 1 < dims[a])
            })
            .map(|(_, &v)| v)
            .collect()
    };
    Ok(population_std(&vals))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_label_dsc: BTreeMap<u32, f64>,
    pub overall_dsc: f64,
    pub avg_dsc: f64,
    /// `None` where a mask is empty in either map.
    pub hd95_mm: BTreeMap<u32, Option<f64>>,
    pub folding_pct: f64,
    pub jacobian_std: f64,
}

impl MetricReport {
    /// One row per label, then a summary row labelled `all`.
    pub fn to_csv(&self) -> String {
        let fmt = |v: f64| format!("{v}");
        let mut s = String::from(
            "# overall_dsc = Dice of the foreground union; avg_dsc = mean of per-label Dice\n\
             label,per_label_dsc,hd95_mm,overall_dsc,avg_dsc,folding_pct,jacobian_std\n",
        );
        for (l, d) in &self.per_label_dsc {
            let h = match self.hd95_mm.get(l).copied().flatten() {
                Some(h) => fmt(h),
                None => "undefined".into(),
            };
            let _ = writeln!(s, "{l},{},{h},,,,", fmt(*d));
        }
        let _ = writeln!(
            s,
            "all,,,{},{},{},{}",
            fmt(self.overall_dsc),
            fmt(self.avg_dsc),
            fmt(self.folding_pct),
            fmt(self.jacobian_std)
        );
        s
    }
}

/// Full report for warped labels against fixed labels, with the field's
/// regularity statistics. Distances use the fixed map's spacing.
pub fn evaluate(fixed: &LabelMap, warped: &LabelMap, field: &DisplacementField) -> Result<MetricReport> {
    same_dims(fixed, warped)?;
    if field.dims() != fixed.dims() {
        return Err(Error::DimsMismatch(field.dims(), fixed.dims()));
    }
    let (overall_dsc, avg_dsc) = overall_and_avg_dsc(fixed, warped)?;
    let labels = foreground_union(fixed, warped);
    let mut per_label_dsc = BTreeMap::new();
    let mut hd95_mm = BTreeMap::new();
    for l in labels {
        per_label_dsc.insert(l, dsc(fixed, warped, l)?);
        let h = match hd95(fixed, warped, l, fixed.spacing()) {
            Ok(h) => Some(h),
            Err(Error::EmptyMask(_)) => None,
            Err(e) => return Err(e),
        };
        hd95_mm.insert(l, h);
    }
    Ok(MetricReport {
        per_label_dsc,
        overall_dsc,
        avg_dsc,
        hd95_mm,
        folding_pct: folding_fraction(field)?,
        jacobian_std: jacobian_std(field, false)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::UNIT_SPACING;

    fn map(dims: Dims, f: impl FnMut(usize, usize, usize) -> u32) -> LabelMap {
        LabelMap::from_fn(dims, UNIT_SPACING, f).unwrap()
    }

    #[test]
    fn dice_examples() {
        let a = map([2, 2, 4], |z, _, _| (z == 0) as u32);
        assert_eq!(dsc(&a, &a, 1).unwrap(), 1.0);
        let b = map([2, 2, 4], |z, _, _| (z == 1) as u32);
        assert_eq!(dsc(&a, &b, 1).unwrap(), 0.0);
        assert_eq!(dsc(&a, &b, 7).unwrap(), 1.0);

        // |X| = 8, |Y| = 8, |X ∩ Y| = 6
        let x = map([1, 4, 4], |_, y, _| (y < 2) as u32);
        let y = map([1, 4, 4], |_, y, x| {
            ((y < 2 && x > 0) || (y == 2 && x < 2)) as u32
        });
        assert_eq!(x.mask(1).iter().filter(|&&m| m).count(), 8);
        assert_eq!(y.mask(1).iter().filter(|&&m| m).count(), 8);
        assert_eq!(dsc(&x, &y, 1).unwrap(), 0.75);
        assert_eq!(dsc(&y, &x, 1).unwrap(), 0.75);
    }

    #[test]
    fn overall_and_average() {
        let x = map([1, 4, 4], |_, y, _| (y < 2) as u32);
        let y = map([1, 4, 4], |_, y, x| {
            ((y < 2 && x > 0) || (y == 2 && x < 2)) as u32
        });
        let (o, a) = overall_and_avg_dsc(&x, &y).unwrap();
        assert_eq!((o, a), (0.75, 0.75));

        // label 1 matches exactly, label 2 sits on disjoint voxels of equal size
        let p = map([1, 2, 4], |_, y, x| match (y, x < 2) {
            (0, true) => 1,
            (1, true) => 2,
            _ => 0,
        });
        let q = map([1, 2, 4], |_, y, x| match (y, x < 2) {
            (0, true) => 1,
            (0, false) => 2,
            _ => 0,
        });
        let (o, a) = overall_and_avg_dsc(&p, &q).unwrap();
        assert_eq!((o, a), (0.5, 0.5));

        let bg = map([1, 2, 2], |_, _, _| 0);
        assert!(matches!(overall_and_avg_dsc(&bg, &bg), Err(Error::NoForeground)));
    }

    #[test]
    fn hd95_examples() {
        let dims = [1, 1, 8];
        let x = map(dims, |_, _, x| (x == 1) as u32);
        let y = map(dims, |_, _, x| (x == 4) as u32);
        let s = [1.0, 1.0, 1.8];
        assert!((hd95(&x, &y, 1, s).unwrap() - 5.4).abs() < 1e-12);
        assert_eq!(hd95(&x, &x, 1, s).unwrap(), 0.0);
        let empty = map(dims, |_, _, _| 0);
        assert!(matches!(hd95(&x, &empty, 1, s), Err(Error::EmptyMask(1))));
    }

    #[test]
    fn hd95_properties() {
        let dims = [6, 7, 8];
        let x = map(dims, |z, y, x| {
            ((z as i64 - 2).pow(2) + (y as i64 - 3).pow(2) + (x as i64 - 3).pow(2) <= 5) as u32
        });
        let y = map(dims, |z, y, x| {
            (z >= 1 && z <= 4 && y >= 2 && x >= 3 && x <= 6) as u32
        });
        let s = [1.0, 1.0, 1.0];
        let h = hd95(&x, &y, 1, s).unwrap();
        assert_eq!(h, hd95(&y, &x, 1, s).unwrap());
        assert!(h <= hausdorff(&x, &y, 1, s).unwrap());
        let h2 = hd95(&x, &y, 1, [2.0, 2.0, 2.0]).unwrap();
        assert!((h2 - 2.0 * h).abs() <= 1e-12);
    }

    #[test]
    fn boundary_interior_excluded() {
        let dims = [5, 5, 5];
        let m: Vec<bool> = vec![true; 125];
        let b = boundary_voxels(&m, dims);
        assert_eq!(b.len(), 125 - 27);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0, 4.0], 0.5), 2.5);
        assert_eq!(percentile(&[5.0], 0.95), 5.0);
        assert!((percentile(&[0.0, 10.0], 0.95) - 9.5).abs() < 1e-12);
    }

    #[test]
    fn folding_and_jacobian_spread() {
        let z = DisplacementField::zeros([4, 4, 4], UNIT_SPACING).unwrap();
        assert_eq!(folding_fraction(&z).unwrap(), 0.0);
        assert_eq!(jacobian_std(&z, false).unwrap(), 0.0);

        let fold = DisplacementField::from_fn([4, 4, 4], UNIT_SPACING, |z, y, x| {
            if z == 1 && y == 2 {
                [0.0, 0.0, -2.0 * x as f64]
            } else {
                [0.0; 3]
            }
        })
        .unwrap();
        assert_eq!(folding_fraction(&fold).unwrap(), 6.25);

        let affine = DisplacementField::from_fn([5, 5, 5], UNIT_SPACING, |z, y, x| {
            [0.1 * z as f64, 0.1 * y as f64, 0.1 * x as f64]
        })
        .unwrap();
        assert!(jacobian_std(&affine, false).unwrap() < 1e-12);
        assert!((population_std(&[1.0, 1.0, 1.0, 3.0]) - 0.866_025_403_784_438_6).abs() < 1e-12);
    }

    #[test]
    fn regularity_is_shift_invariant() {
        let f = DisplacementField::from_fn([5, 6, 7], UNIT_SPACING, |z, y, x| {
            [
                (0.7 * z as f64).sin(),
                (0.5 * y as f64 * x as f64).cos(),
                0.3 * (z * x) as f64,
            ]
        })
        .unwrap();
        let g = f.shifted([3.0, -1.5, 0.25]);
        assert!((folding_fraction(&f).unwrap() - folding_fraction(&g).unwrap()).abs() <= 1e-12);
        for inc in [false, true] {
            assert!((jacobian_std(&f, inc).unwrap() - jacobian_std(&g, inc).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn report_csv() {
        let dims = [4, 4, 4];
        let fixed = map(dims, |z, _, x| {
            if z < 2 {
                1
            } else if x < 2 {
                2
            } else {
                0
            }
        });
        let f = DisplacementField::zeros(dims, UNIT_SPACING).unwrap();
        let r = evaluate(&fixed, &fixed, &f).unwrap();
        assert_eq!(r.overall_dsc, 1.0);
        assert_eq!(r.hd95_mm[&2], Some(0.0));
        let csv = r.to_csv();
        assert!(csv.contains("label,per_label_dsc,hd95_mm,overall_dsc,avg_dsc,folding_pct,jacobian_std"));
        assert_eq!(csv.lines().count(), 5);
    }
}
