use image::{Rgb, RgbImage};
use nalgebra::Vector3;

use crate::graph::ObjectNode;

pub const RENDER_SIZE: u32 = 256;
/// Axis legend: X red, Y green, Z blue.
pub const AXIS_COLORS: [[u8; 3]; 3] = [[220, 30, 30], [30, 170, 30], [30, 60, 220]];

const BACKGROUND: [u8; 3] = [255, 255, 255];
const POINT: [u8; 3] = [150, 150, 150];

/// Top-down orthographic sketch of the object's points with its box axes
/// drawn from the center, each as long as the larger of its half extent
/// and a quarter of the view.
pub fn render_axes(node: &ObjectNode) -> RgbImage {
    let mut img = RgbImage::from_pixel(RENDER_SIZE, RENDER_SIZE, Rgb(BACKGROUND));
    let c = node.obb.center;
    let reach = node
        .point_cloud
        .iter()
        .map(|p| ((p.x - c.x).abs()).max((p.y - c.y).abs()))
        .fold(node.obb.half_extents.max(), f64::max)
        .max(1e-3);
    let half = RENDER_SIZE as f64 / 2.0;
    let scale = 0.8 * half / reach;
    let to_px = |p: &Vector3<f64>| ((p.x - c.x) * scale + half, half - (p.y - c.y) * scale);
    let put = |img: &mut RgbImage, (u, v): (f64, f64), color: [u8; 3]| {
        if u >= 0.0 && v >= 0.0 && u < RENDER_SIZE as f64 && v < RENDER_SIZE as f64 {
            img.put_pixel(u as u32, v as u32, Rgb(color));
        }
    };
    for p in &node.point_cloud {
        put(&mut img, to_px(p), POINT);
    }
    // Draw Z first so the in-plane axes stay visible on top.
    for i in [2usize, 1, 0] {
        let len = node.obb.half_extents[i].max(reach * 0.25);
        let tip = c + node.obb.axes.column(i) * len;
        let (u0, v0) = to_px(&c);
        let (u1, v1) = to_px(&tip);
        let steps = ((u1 - u0).abs().max((v1 - v0).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let (u, v) = (u0 + (u1 - u0) * t, v0 + (v1 - v0) * t);
            for (du, dv) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)] {
                put(&mut img, (u + du, v + dv), AXIS_COLORS[i]);
            }
        }
    }
    img
}
