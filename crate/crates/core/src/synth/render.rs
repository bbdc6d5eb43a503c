use rand::Rng;

use super::{Event, Motion, Subject};
use crate::encoders::CHANNELS;

pub const BACKGROUND: u8 = 128;
/// Background noise amplitude; keeps gray pixels far from any object color.
pub const NOISE: i16 = 6;

/// Object half extents `(half_width, half_height)` in pixels.
pub fn half_extents(subject: Subject, height: usize, width: usize) -> (f64, f64) {
    let s = height.min(width) as f64;
    match subject {
        Subject::Man => (s / 16.0, s / 8.0),
        Subject::Woman => (s / 10.0, s / 10.0),
        Subject::Baby => (s / 20.0, s / 20.0),
        Subject::Dog => (s / 8.0, s / 16.0),
        Subject::Truck => (3.0 * s / 16.0, 3.0 * s / 32.0),
    }
}

/// Radius of the circular path.
pub fn circle_radius(height: usize, width: usize) -> f64 {
    height.min(width) as f64 / 4.0
}

/// Object centre `(x, y)` at frame `t`, given the per-sample anchor.
pub fn center(
    event: &Event,
    anchor: (f64, f64),
    t: usize,
    frames: usize,
    height: usize,
    width: usize,
) -> (f64, f64) {
    let (h, w) = (height as f64, width as f64);
    let u = if frames > 1 {
        t as f64 / (frames - 1) as f64
    } else {
        0.0
    };
    match event.motion {
        Motion::Horizontal => (0.25 * w + 0.5 * w * u, anchor.1),
        Motion::Vertical => (anchor.0, 0.25 * h + 0.5 * h * u),
        Motion::Circular => {
            let r = circle_radius(height, width);
            let theta = anchor.0 + std::f64::consts::TAU * t as f64 / frames as f64;
            (w / 2.0 + r * theta.cos(), h / 2.0 + r * theta.sin())
        }
        Motion::Static => anchor,
    }
}

fn inside(subject: Subject, dx: f64, dy: f64, hw: f64, hh: f64) -> bool {
    match subject {
        Subject::Woman => (dx / hw).powi(2) + (dy / hh).powi(2) <= 1.0,
        _ => dx.abs() <= hw && dy.abs() <= hh,
    }
}

/// `T` frames of one event: a gray noisy background shared by all frames
/// with the subject's shape drawn at its per-frame centre.
pub fn render_frames<R: Rng>(
    event: &Event,
    height: usize,
    width: usize,
    frames: usize,
    rng: &mut R,
) -> Vec<u8> {
    let mut background = vec![0u8; height * width * CHANNELS];
    for p in background.iter_mut() {
        *p = (BACKGROUND as i16 + rng.gen_range(-NOISE..=NOISE)) as u8;
    }
    let (h, w) = (height as f64, width as f64);
    let anchor = match event.motion {
        Motion::Circular => (rng.gen_range(0.0..std::f64::consts::TAU), 0.0),
        _ => (
            rng.gen_range(0.35 * w..0.65 * w),
            rng.gen_range(0.35 * h..0.65 * h),
        ),
    };
    let color = event.color.rgb();
    let (hw, hh) = half_extents(event.subject, height, width);
    let mut out = Vec::with_capacity(frames * background.len());
    for t in 0..frames {
        let mut frame = background.clone();
        let (cx, cy) = center(event, anchor, t, frames, height, width);
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                if inside(event.subject, dx, dy, hw, hh) {
                    let o = (y * width + x) * CHANNELS;
                    frame[o..o + CHANNELS].copy_from_slice(&color);
                }
            }
        }
        out.extend_from_slice(&frame);
    }
    out
}

/// Mean `(x, y)` of pixels equal to `color` in one frame, if any.
pub fn color_centroid(frame: &[u8], width: usize, color: [u8; 3]) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (i, px) in frame.chunks_exact(CHANNELS).enumerate() {
        if px == color {
            sx += (i % width) as f64 + 0.5;
            sy += (i / width) as f64 + 0.5;
            n += 1;
        }
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}
