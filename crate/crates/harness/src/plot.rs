//! Static line and bar charts. Every chart is written next to a
//! line-delimited data file holding exactly the plotted points.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use graphprune_train::log::{read_log, updates};
use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_rect_mut, draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::eval::EvalReport;

pub const TRAINING_DATA: &str = "training_series.jsonl";
pub const EVAL_DATA: &str = "eval_series.jsonl";

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: f32 = 40.0;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([0, 0, 0]);
const LINE: Rgb<u8> = Rgb([31, 119, 180]);
const WHISKER: Rgb<u8> = Rgb([200, 40, 40]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub series: String,
    pub x: f64,
    pub y: f64,
    /// Half-height of an error bar, for bar charts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Exponential moving average with smoothing factor `alpha` in (0, 1].
pub fn ema(ys: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(ys.len());
    let mut acc = None;
    for &y in ys {
        let v = match acc {
            None => y,
            Some(a) => alpha * y + (1.0 - alpha) * a,
        };
        acc = Some(v);
        out.push(v);
    }
    out
}

/// Value loss, mean episode reward and mean coverage against environment
/// steps. Updates with no finished episode contribute no reward or coverage
/// point.
pub fn training_series(log: &Path, smoothing: Option<f64>) -> Result<Vec<Series>> {
    let (_, records) = read_log(log)?;
    let ups = updates(&records);
    let collect = |name: &str, f: &dyn Fn(&graphprune_train::log::UpdateRecord) -> Option<f64>| {
        let pts: Vec<(f64, f64)> = ups.iter().filter_map(|u| f(u).map(|y| (u.global_step as f64, y))).collect();
        let pts = match smoothing {
            Some(a) => {
                let ys = ema(&pts.iter().map(|p| p.1).collect::<Vec<_>>(), a);
                pts.iter().zip(ys).map(|(p, y)| (p.0, y)).collect()
            }
            None => pts,
        };
        Series {
            name: name.to_string(),
            points: pts,
        }
    };
    Ok(vec![
        collect("value_loss", &|u| Some(u.value_loss)),
        collect("episode_reward", &|u| u.mean_episode_reward),
        collect("coverage", &|u| u.mean_coverage),
    ])
}

fn write_points(path: &Path, points: &[Point]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?);
    for p in points {
        writeln!(f, "{}", serde_json::to_string(p).expect("point serialises")).map_err(|e| HarnessError::io(path, e))?;
    }
    f.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_points(path: &Path) -> Result<Vec<Point>> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    BufReader::new(f)
        .lines()
        .map(|l| {
            let l = l.map_err(|e| HarnessError::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| HarnessError::Invalid(format!("{}: {e}", path.display())))
        })
        .collect()
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| HarnessError::Image {
        path: path.to_path_buf(),
        source,
    })
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        Self {
            x: span(&mut xs.clone()),
            y: span(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64, y: f64) -> (f32, f32) {
        let w = WIDTH as f32 - 2.0 * MARGIN;
        let h = HEIGHT as f32 - 2.0 * MARGIN;
        let fx = ((x - self.x.0) / (self.x.1 - self.x.0)) as f32;
        let fy = ((y - self.y.0) / (self.y.1 - self.y.0)) as f32;
        (MARGIN + fx * w, HEIGHT as f32 - MARGIN - fy * h)
    }
}

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND);
    let (l, b) = (MARGIN, HEIGHT as f32 - MARGIN);
    draw_line_segment_mut(&mut img, (l, MARGIN), (l, b), AXIS);
    draw_line_segment_mut(&mut img, (l, b), (WIDTH as f32 - MARGIN, b), AXIS);
    img
}

pub fn line_chart(series: &Series) -> RgbImage {
    let mut img = canvas();
    let frame = Frame::fit(series.points.iter().map(|p| p.0), series.points.iter().map(|p| p.1));
    let px: Vec<(f32, f32)> = series.points.iter().map(|&(x, y)| frame.px(x, y)).collect();
    for w in px.windows(2) {
        draw_line_segment_mut(&mut img, w[0], w[1], LINE);
    }
    for &(x, y) in &px {
        draw_filled_rect_mut(&mut img, Rect::at(x as i32 - 1, y as i32 - 1).of_size(3, 3), LINE);
    }
    img
}

/// Bars at `mean` with whiskers of `± std`, one per entry.
pub fn bar_chart(bars: &[(f64, f64)]) -> RgbImage {
    let mut img = canvas();
    let top = bars.iter().map(|b| b.0 + b.1).fold(0.0, f64::max);
    let frame = Frame {
        x: (0.0, bars.len().max(1) as f64),
        y: (0.0, if top > 0.0 { top * 1.05 } else { 1.0 }),
    };
    for (i, &(mean, std)) in bars.iter().enumerate() {
        let (x0, y0) = frame.px(i as f64 + 0.2, mean);
        let (x1, base) = frame.px(i as f64 + 0.8, 0.0);
        let h = (base - y0).max(1.0) as u32;
        draw_filled_rect_mut(&mut img, Rect::at(x0 as i32, y0 as i32).of_size((x1 - x0) as u32, h), LINE);
        draw_hollow_rect_mut(&mut img, Rect::at(x0 as i32, y0 as i32).of_size((x1 - x0) as u32, h), AXIS);
        let xc = (x0 + x1) / 2.0;
        let (_, hi) = frame.px(0.0, mean + std);
        let (_, lo) = frame.px(0.0, (mean - std).max(0.0));
        draw_line_segment_mut(&mut img, (xc, hi), (xc, lo), WHISKER);
        draw_line_segment_mut(&mut img, (xc - 6.0, hi), (xc + 6.0, hi), WHISKER);
        draw_line_segment_mut(&mut img, (xc - 6.0, lo), (xc + 6.0, lo), WHISKER);
    }
    img
}

/// Writes `value_loss.png`, `episode_reward.png`, `coverage.png` and the
/// underlying points into `out`.
pub fn emit_training_plots(log: &Path, out: &Path, smoothing: Option<f64>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let series = training_series(log, smoothing)?;
    let mut points = Vec::new();
    let mut written = Vec::new();
    for s in &series {
        points.extend(s.points.iter().map(|&(x, y)| Point {
            series: s.name.clone(),
            x,
            y,
            err: None,
        }));
        let path = out.join(format!("{}.png", s.name));
        save(&line_chart(s), &path)?;
        written.push(path);
    }
    let data = out.join(TRAINING_DATA);
    write_points(&data, &points)?;
    written.push(data);
    Ok(written)
}

/// Coverage bar chart with standard-deviation whiskers, one bar per strategy.
pub fn emit_eval_plot(report: &EvalReport, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let bars: Vec<(f64, f64)> = report
        .strategies
        .iter()
        .map(|s| (s.coverage_pct.mean, s.coverage_pct.std))
        .collect();
    let points: Vec<Point> = report
        .strategies
        .iter()
        .enumerate()
        .map(|(i, s)| Point {
            series: s.strategy.to_string(),
            x: i as f64,
            y: s.coverage_pct.mean,
            err: Some(s.coverage_pct.std),
        })
        .collect();
    let png = out.join("eval_coverage.png");
    save(&bar_chart(&bars), &png)?;
    let data = out.join(EVAL_DATA);
    write_points(&data, &points)?;
    Ok(vec![png, data])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_matches_recurrence() {
        let ys = [1.0, 2.0, 4.0];
        let e = ema(&ys, 0.5);
        assert_eq!(e, vec![1.0, 1.5, 2.75]);
        assert_eq!(ema(&ys, 1.0), ys.to_vec());
    }

    #[test]
    fn charts_have_fixed_size_and_ink() {
        let s = Series {
            name: "x".into(),
            points: vec![(0.0, 1.0), (1.0, 3.0), (2.0, 2.0)],
        };
        let img = line_chart(&s);
        assert_eq!(img.dimensions(), (WIDTH, HEIGHT));
        assert!(img.pixels().any(|p| *p == LINE));
        let img = bar_chart(&[(70.0, 18.0), (42.0, 7.7)]);
        assert!(img.pixels().any(|p| *p == WHISKER));
        // Degenerate inputs still render.
        line_chart(&Series {
            name: "flat".into(),
            points: vec![(3.0, 0.5)],
        });
        bar_chart(&[]);
    }
}
