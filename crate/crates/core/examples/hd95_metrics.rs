//! Dice and HD95 on two shifted boxes, with the distance-transform path checked against
//! exhaustive search.
//!
//! cargo run --example hd95_metrics

use ndarray::Array3;
use volseg::metrics::{dice_coefficient, extract_boundary, hd95, hd95_bruteforce};

fn boxed(lo: [usize; 3], hi: [usize; 3]) -> Array3<bool> {
    Array3::from_shape_fn((12, 24, 24), |(z, y, x)| {
        (lo[0]..hi[0]).contains(&z) && (lo[1]..hi[1]).contains(&y) && (lo[2]..hi[2]).contains(&x)
    })
}

fn main() -> volseg::Result<()> {
    let gt = boxed([2, 4, 4], [9, 16, 18]);
    let pred = boxed([3, 5, 6], [9, 18, 18]);
    let spacing = [2.5, 0.8, 0.8];
    println!("boundary voxels: gt {}, pred {}", extract_boundary(&gt).len(), extract_boundary(&pred).len());
    println!("dice {:.4}", dice_coefficient(&pred, &gt)?);
    let fast = hd95(&pred, &gt, spacing)?.unwrap();
    let slow = hd95_bruteforce(&pred, &gt, spacing)?.unwrap();
    println!("hd95 {fast:.6} mm (exhaustive {slow:.6} mm)");

    let a = Array3::from_shape_fn((1, 4, 5), |i| i == (0, 0, 0));
    let b = Array3::from_shape_fn((1, 4, 5), |i| i == (0, 3, 4));
    println!("single voxels (0,0,0) and (0,3,4): hd95 {:?}", hd95(&a, &b, [1.0; 3])?);
    Ok(())
}
