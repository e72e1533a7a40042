use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::annotations::scale_box;

fn bin(rows: usize, cols: usize, on: &[(usize, usize)]) -> Grid<bool> {
    let mut g = Grid::filled(rows, cols, false);
    for &(r, c) in on {
        *g.get_mut(r, c) = true;
    }
    g
}

fn pmap(rows: usize, cols: usize, v: Vec<f64>) -> ProbabilityMap {
    ProbabilityMap::new(Grid::from_vec(rows, cols, v).unwrap(), MapSource::Saliency).unwrap()
}

/// Recursive flood fill, labels assigned in raster order of seeds.
fn flood_fill_oracle(b: &Grid<bool>, conn: Connectivity) -> Grid<u32> {
    fn fill(b: &Grid<bool>, out: &mut Grid<u32>, y: usize, x: usize, label: u32, conn: Connectivity) {
        if !b.at(y, x) || out.at(y, x) != 0 {
            return;
        }
        *out.get_mut(y, x) = label;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if (dy, dx) == (0, 0) || (conn == Connectivity::Four && dy != 0 && dx != 0) {
                    continue;
                }
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                if ny >= 0 && nx >= 0 && (ny as usize) < b.rows() && (nx as usize) < b.cols() {
                    fill(b, out, ny as usize, nx as usize, label, conn);
                }
            }
        }
    }
    let mut out = Grid::filled(b.rows(), b.cols(), 0u32);
    let mut next = 0;
    for y in 0..b.rows() {
        for x in 0..b.cols() {
            if b.at(y, x) && out.at(y, x) == 0 {
                next += 1;
                fill(b, &mut out, y, x, next, conn);
            }
        }
    }
    out
}

#[test]
fn binarize_boundary_is_foreground() {
    let m = pmap(1, 3, vec![0.4, 0.5, 0.6]);
    assert_eq!(binarize(&m, 0.5).as_slice(), &[false, true, true]);
    assert!(binarize(&pmap(2, 2, vec![0.4; 4]), 0.5).iter().all(|&b| !b));
}

#[test]
fn binarize_matches_per_pixel_comparison() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let v: Vec<f64> = (0..64).map(|_| rng.gen()).collect();
        let t = rng.gen_range(0.05..0.95);
        let b = binarize(&pmap(8, 8, v.clone()), t);
        for (i, &p) in v.iter().enumerate() {
            assert_eq!(b.as_slice()[i], p >= t);
        }
    }
}

#[test]
fn labeling_examples() {
    let l = label_components(&bin(4, 4, &[(0, 0), (0, 1), (3, 3)]), Connectivity::Eight);
    assert_eq!(l.areas, vec![2, 1]);
    let diag = bin(2, 2, &[(0, 0), (1, 1)]);
    assert_eq!(label_components(&diag, Connectivity::Eight).num_components(), 1);
    assert_eq!(label_components(&diag, Connectivity::Four).num_components(), 2);
    assert_eq!(label_components(&bin(3, 3, &[]), Connectivity::Eight).num_components(), 0);
}

#[test]
fn u_shape_merges_through_union_find() {
    // two arms that only meet on the last row
    let on = [(0, 0), (1, 0), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2)];
    let l = label_components(&bin(3, 3, &on), Connectivity::Four);
    assert_eq!(l.areas, vec![7]);
    assert_eq!(l.labels.at(0, 2), 1);
}

#[test]
fn labeling_matches_flood_fill_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..200 {
        let density = rng.gen_range(0.2..0.7);
        let g = Grid::from_fn(16, 16, |_, _| rng.gen_bool(density));
        for conn in [Connectivity::Four, Connectivity::Eight] {
            let got = label_components(&g, conn);
            let want = flood_fill_oracle(&g, conn);
            assert_eq!(got.labels, want);
            for (k, &a) in got.areas.iter().enumerate() {
                assert_eq!(a, want.iter().filter(|&&l| l as usize == k + 1).count());
            }
        }
    }
}

#[test]
fn tight_box_of_single_component() {
    let on = [(1, 1), (1, 2), (1, 3), (2, 2)];
    let l = label_components(&bin(5, 5, &on), Connectivity::Eight);
    let b = extract_boxes(&l, 0.0, Keep::Largest).unwrap();
    assert_eq!(b, vec![BoundingBox::new(1, 1, 3, 2).unwrap()]);
}

#[test]
fn small_components_are_filtered() {
    let mut on = Vec::new();
    for y in 0..5 {
        for x in 0..10 {
            on.push((y, x));
        }
    }
    on.extend([(15, 15), (15, 16), (16, 15)]);
    let l = label_components(&bin(20, 20, &on), Connectivity::Eight);
    assert_eq!(l.areas, vec![50, 3]);
    let all = extract_boxes(&l, 0.01, Keep::All).unwrap();
    assert_eq!(all, vec![BoundingBox::new(0, 0, 9, 4).unwrap()]);
    assert_eq!(extract_boxes(&l, 0.0, Keep::All).unwrap().len(), 2);
    assert!(extract_boxes(&l, 0.5, Keep::Largest).unwrap().is_empty());
    assert!(extract_boxes(&l, 1.0, Keep::All).is_err());
}

#[test]
fn largest_ties_go_to_lower_label() {
    let l = label_components(&bin(3, 5, &[(0, 0), (0, 4)]), Connectivity::Eight);
    assert_eq!(extract_boxes(&l, 0.0, Keep::Largest).unwrap(), vec![BoundingBox::new(0, 0, 0, 0).unwrap()]);
}

#[test]
fn boxes_match_pixel_scan_on_random_masks() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let g = Grid::from_fn(20, 20, |_, _| rng.gen_bool(0.3));
        let l = label_components(&g, Connectivity::Eight);
        let boxes = extract_boxes(&l, 0.0, Keep::All).unwrap();
        for (k, b) in boxes.iter().enumerate() {
            let label = k as u32 + 1;
            let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
            for y in 0..20 {
                for x in 0..20 {
                    if l.labels.at(y, x) == label {
                        x0 = x0.min(x);
                        y0 = y0.min(y);
                        x1 = x1.max(x);
                        y1 = y1.max(y);
                    }
                }
            }
            assert_eq!(*b, BoundingBox::new(x0, y0, x1, y1).unwrap());
            // tightness: each side touches the component
            assert!((b.y_min..=b.y_max).any(|y| l.labels.at(y, b.x_min) == label));
            assert!((b.y_min..=b.y_max).any(|y| l.labels.at(y, b.x_max) == label));
            assert!((b.x_min..=b.x_max).any(|x| l.labels.at(b.y_min, x) == label));
            assert!((b.x_min..=b.x_max).any(|x| l.labels.at(b.y_max, x) == label));
        }
    }
}

#[test]
fn stub_saliency_of_constant_image_is_zero() {
    let m = stub_saliency(&Grid::filled(32, 32, 0.4));
    assert!(m.values.iter().all(|&v| v == 0.0));
    assert_eq!(m.source, MapSource::Stub);
}

#[test]
fn stub_saliency_boxes_a_bright_patch() {
    let mut img = Grid::filled(64, 64, 0.2);
    let patch = BoundingBox::new(40, 10, 49, 19).unwrap();
    for y in patch.y_min..=patch.y_max {
        for x in patch.x_min..=patch.x_max {
            *img.get_mut(y, x) = 0.9;
        }
    }
    let m = stub_saliency(&img);
    let (imax, _) = m.values.iter().enumerate().fold((0, -1.0), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
    assert!(scale_box(&patch, 1.5, (64, 64)).unwrap().contains(imax % 64, imax / 64));
    let boxes = boxes_from_map(&m, &BoxGenParams::default()).unwrap();
    assert_eq!(boxes.len(), 1);
    assert!(boxes[0].contains_box(&patch), "{:?}", boxes[0]);
    assert!(boxes[0].iou(&patch) > 0.3, "{:?}", boxes[0]);
}

#[test]
fn invalid_params_are_rejected() {
    let m = pmap(2, 2, vec![0.1; 4]);
    for t in [0.0, 1.0, -0.5] {
        let p = BoxGenParams { threshold: t, ..BoxGenParams::default() };
        assert!(boxes_from_map(&m, &p).is_err());
    }
    assert!(ProbabilityMap::new(Grid::filled(1, 1, 1.5), MapSource::Stub).is_err());
    assert!(Connectivity::from_neighbours(6).is_err());
}

proptest! {
    #[test]
    fn higher_threshold_never_adds_foreground(v in proptest::collection::vec(0.0f64..=1.0, 49), a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let m = pmap(7, 7, v);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let n_lo = binarize(&m, lo).iter().filter(|&&x| x).count();
        let n_hi = binarize(&m, hi).iter().filter(|&&x| x).count();
        prop_assert!(n_hi <= n_lo);
    }
}
