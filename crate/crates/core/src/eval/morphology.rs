//! Hole filling (4-connected background flood from the border) and
//! largest-component selection (8-connected foreground).

use std::collections::VecDeque;

use super::mask::BinaryMask;

const N4: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
const N8: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

fn neighbours(
    (h, w): (usize, usize),
    (y, x): (usize, usize),
    offsets: &'static [(isize, isize)],
) -> impl Iterator<Item = (usize, usize)> {
    offsets.iter().filter_map(move |&(dy, dx)| {
        let (ny, nx) = (y as isize + dy, x as isize + dx);
        (ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w).then(|| (ny as usize, nx as usize))
    })
}

/// Sets every background pixel not 4-connected to the border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    let mut outside = vec![false; h * w];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let border = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            if border && !mask.get(y, x) {
                outside[y * w + x] = true;
                queue.push_back((y, x));
            }
        }
    }
    while let Some(p) = queue.pop_front() {
        for (ny, nx) in neighbours((h, w), p, &N4) {
            if !mask.get(ny, nx) && !outside[ny * w + nx] {
                outside[ny * w + nx] = true;
                queue.push_back((ny, nx));
            }
        }
    }
    BinaryMask::from_fn(h, w, mask.class, |y, x| !outside[y * w + x])
}

/// Component label per pixel (0 = background) and component sizes, with
/// labels assigned in raster order of each component's first pixel.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<usize>) {
    let (h, w) = mask.dims();
    let mut labels = vec![0u32; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) || labels[y * w + x] != 0 {
                continue;
            }
            sizes.push(0);
            let id = sizes.len() as u32;
            labels[y * w + x] = id;
            queue.push_back((y, x));
            while let Some(p) = queue.pop_front() {
                sizes[id as usize - 1] += 1;
                for (ny, nx) in neighbours((h, w), p, &N8) {
                    if mask.get(ny, nx) && labels[ny * w + nx] == 0 {
                        labels[ny * w + nx] = id;
                        queue.push_back((ny, nx));
                    }
                }
            }
        }
    }
    (labels, sizes)
}

/// Keeps the largest 8-connected component; ties go to the one found first
/// in raster order.
pub fn keep_largest(mask: &BinaryMask) -> BinaryMask {
    let (labels, sizes) = label_components(mask);
    let mut best = 0;
    for (i, &s) in sizes.iter().enumerate() {
        if s > sizes[best] {
            best = i;
        }
    }
    let keep = best as u32 + 1;
    let (h, w) = mask.dims();
    BinaryMask::from_fn(h, w, mask.class, |y, x| !sizes.is_empty() && labels[y * w + x] == keep)
}

/// Hole filling followed by largest-component selection.
pub fn postprocess(mask: &BinaryMask) -> BinaryMask {
    keep_largest(&fill_holes(mask))
}
