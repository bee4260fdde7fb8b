//! Deterministic synthetic LiDAR sequence generator with ground-truth
//! moving-object flags.
//!
//! Scenes are described by a small line-oriented script: axis-aligned static
//! boxes, a ground plane, moving boxes on linear trajectories, and a sensor
//! model. Rays are sampled at the bin centers of the sensor's direction
//! grid and intersected analytically with the primitives, so generator
//! error cannot mask pipeline error; the nearest surface wins, which makes
//! occlusion exact.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::geom::{Point3, PoseSE3, Scan};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("line {line}: unknown directive '{word}'")]
    UnknownDirective { line: usize, word: String },
    #[error("line {line}: '{word}' takes {expected} arguments, found {found}")]
    Arity {
        line: usize,
        word: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse '{token}' as a number")]
    BadNumber { line: usize, token: String },
    #[error("line {line}: box has zero or negative extent")]
    DegenerateBox { line: usize },
    #[error("line {line}: {msg}")]
    BadValue { line: usize, msg: String },
    #[error("script is missing the required '{0}' directive")]
    Missing(&'static str),
}

/// The direction sampling model of the emulated sensor.
#[derive(Debug, Clone, Copy)]
pub struct SensorModel {
    pub n_az: usize,
    pub n_el: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub r_max: f64,
    /// Restricts emission to azimuths inside this window, emulating a
    /// solid-state sensor with a partial field of view.
    pub azimuth_window: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct BoxPrimitive {
    pub min: Point3,
    pub max: Point3,
}

impl BoxPrimitive {
    fn is_degenerate(&self) -> bool {
        !(self.min.x < self.max.x && self.min.y < self.max.y && self.min.z < self.max.z)
    }

    fn shifted(&self, d: Point3) -> BoxPrimitive {
        BoxPrimitive {
            min: self.min + d,
            max: self.max + d,
        }
    }

    /// Slab-method ray intersection; returns the entry distance when the ray
    /// hits the box from outside.
    fn intersect(&self, origin: &Point3, dir: &Point3) -> Option<f64> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let o = [origin.x, origin.y, origin.z];
        let d = [dir.x, dir.y, dir.z];
        let lo = [self.min.x, self.min.y, self.min.z];
        let hi = [self.max.x, self.max.y, self.max.z];
        for a in 0..3 {
            if d[a] == 0.0 {
                if o[a] < lo[a] || o[a] > hi[a] {
                    return None;
                }
            } else {
                let inv = 1.0 / d[a];
                let (ta, tb) = ((lo[a] - o[a]) * inv, (hi[a] - o[a]) * inv);
                let (ta, tb) = if ta <= tb { (ta, tb) } else { (tb, ta) };
                t_near = t_near.max(ta);
                t_far = t_far.min(tb);
                if t_near > t_far {
                    return None;
                }
            }
        }
        if t_near > 1e-9 && t_near <= t_far {
            Some(t_near)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MovingBox {
    pub shape: BoxPrimitive,
    /// Displacement per frame, meters.
    pub velocity: Point3,
}

/// A full scene description: primitives, sensor trajectory, and sampling.
#[derive(Debug, Clone)]
pub struct SceneScript {
    pub seed: u64,
    pub frames: usize,
    pub sensor: SensorModel,
    pub origin: Point3,
    /// Sensor displacement per frame.
    pub sensor_velocity: Point3,
    pub static_boxes: Vec<BoxPrimitive>,
    pub movers: Vec<MovingBox>,
    /// Standard deviation of optional Gaussian range jitter, meters.
    pub range_noise: f64,
}

/// One generated frame: the scan plus the per-point moving flag.
#[derive(Debug, Clone)]
pub struct SynthFrame {
    pub scan: Scan,
    pub moving: Vec<bool>,
}

fn parse_floats(
    line_no: usize,
    word: &str,
    args: &[&str],
    expected: usize,
) -> Result<Vec<f64>, ScriptError> {
    if args.len() != expected {
        return Err(ScriptError::Arity {
            line: line_no,
            word: word.to_string(),
            expected,
            found: args.len(),
        });
    }
    args.iter()
        .map(|t| {
            t.parse::<f64>().map_err(|_| ScriptError::BadNumber {
                line: line_no,
                token: t.to_string(),
            })
        })
        .collect::<Result<Vec<f64>, _>>()
        .and_then(|vals| {
            if vals.iter().all(|v| v.is_finite()) {
                Ok(vals)
            } else {
                Err(ScriptError::BadValue {
                    line: line_no,
                    msg: "values must be finite".into(),
                })
            }
        })
}

/// Parses the line-oriented scene script format. `#` starts a comment.
pub fn parse_scene_script(text: &str) -> Result<SceneScript, ScriptError> {
    let mut seed = 0u64;
    let mut frames: Option<usize> = None;
    let mut sensor: Option<SensorModel> = None;
    let mut window: Option<(f64, f64)> = None;
    let mut origin = Point3::ORIGIN;
    let mut sensor_velocity = Point3::ORIGIN;
    let mut static_boxes = Vec::new();
    let mut movers = Vec::new();
    let mut range_noise = 0.0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let mut tokens = line.split_whitespace();
        let word = match tokens.next() {
            Some(w) => w,
            None => continue,
        };
        let args: Vec<&str> = tokens.collect();
        match word {
            "seed" => {
                if args.len() != 1 {
                    return Err(ScriptError::Arity {
                        line: line_no,
                        word: word.into(),
                        expected: 1,
                        found: args.len(),
                    });
                }
                seed = args[0].parse::<u64>().map_err(|_| ScriptError::BadNumber {
                    line: line_no,
                    token: args[0].to_string(),
                })?;
            }
            "frames" => {
                if args.len() != 1 {
                    return Err(ScriptError::Arity {
                        line: line_no,
                        word: word.into(),
                        expected: 1,
                        found: args.len(),
                    });
                }
                let n = args[0]
                    .parse::<usize>()
                    .map_err(|_| ScriptError::BadNumber {
                        line: line_no,
                        token: args[0].to_string(),
                    })?;
                if n == 0 {
                    return Err(ScriptError::BadValue {
                        line: line_no,
                        msg: "frame count must be positive".into(),
                    });
                }
                frames = Some(n);
            }
            "sensor" => {
                let v = parse_floats(line_no, word, &args, 5)?;
                let (n_az, n_el) = (v[0] as usize, v[1] as usize);
                if n_az == 0 || n_el == 0 || v[0].fract() != 0.0 || v[1].fract() != 0.0 {
                    return Err(ScriptError::BadValue {
                        line: line_no,
                        msg: "bin counts must be positive integers".into(),
                    });
                }
                if !(v[2] < v[3]) || v[4] <= 0.0 {
                    return Err(ScriptError::BadValue {
                        line: line_no,
                        msg: "need beta_min < beta_max and a positive max range".into(),
                    });
                }
                sensor = Some(SensorModel {
                    n_az,
                    n_el,
                    beta_min: v[2],
                    beta_max: v[3],
                    r_max: v[4],
                    azimuth_window: None,
                });
            }
            "azimuth_window" => {
                let v = parse_floats(line_no, word, &args, 2)?;
                if !(v[0] < v[1]) {
                    return Err(ScriptError::BadValue {
                        line: line_no,
                        msg: "window must satisfy lo < hi".into(),
                    });
                }
                window = Some((v[0], v[1]));
            }
            "origin" => {
                let v = parse_floats(line_no, word, &args, 3)?;
                origin = Point3::new(v[0], v[1], v[2]);
            }
            "velocity" => {
                let v = parse_floats(line_no, word, &args, 3)?;
                sensor_velocity = Point3::new(v[0], v[1], v[2]);
            }
            "box" => {
                let v = parse_floats(line_no, word, &args, 6)?;
                let b = BoxPrimitive {
                    min: Point3::new(v[0], v[1], v[2]),
                    max: Point3::new(v[3], v[4], v[5]),
                };
                if b.is_degenerate() {
                    return Err(ScriptError::DegenerateBox { line: line_no });
                }
                static_boxes.push(b);
            }
            "ground" => {
                let v = parse_floats(line_no, word, &args, 1)?;
                // Sugar for a large thin slab whose top surface is at z.
                static_boxes.push(BoxPrimitive {
                    min: Point3::new(-500.0, -500.0, v[0] - 0.2),
                    max: Point3::new(500.0, 500.0, v[0]),
                });
            }
            "mover" => {
                let v = parse_floats(line_no, word, &args, 9)?;
                let b = BoxPrimitive {
                    min: Point3::new(v[0], v[1], v[2]),
                    max: Point3::new(v[3], v[4], v[5]),
                };
                if b.is_degenerate() {
                    return Err(ScriptError::DegenerateBox { line: line_no });
                }
                movers.push(MovingBox {
                    shape: b,
                    velocity: Point3::new(v[6], v[7], v[8]),
                });
            }
            "range_noise" => {
                let v = parse_floats(line_no, word, &args, 1)?;
                if v[0] < 0.0 {
                    return Err(ScriptError::BadValue {
                        line: line_no,
                        msg: "noise sigma must be non-negative".into(),
                    });
                }
                range_noise = v[0];
            }
            other => {
                return Err(ScriptError::UnknownDirective {
                    line: line_no,
                    word: other.to_string(),
                })
            }
        }
    }

    let frames = frames.ok_or(ScriptError::Missing("frames"))?;
    let mut sensor = sensor.ok_or(ScriptError::Missing("sensor"))?;
    sensor.azimuth_window = window;
    Ok(SceneScript {
        seed,
        frames,
        sensor,
        origin,
        sensor_velocity,
        static_boxes,
        movers,
        range_noise,
    })
}

fn uniform_unit(rng: &mut ChaCha8Rng) -> f64 {
    // 53 random mantissa bits in [0, 1).
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; consumes two uniforms per sample.
    let u1 = uniform_unit(rng).max(f64::MIN_POSITIVE);
    let u2 = uniform_unit(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generates all frames of the scene: rays at bin centers, nearest surface
/// wins, moving flag from the primitive kind. Deterministic for a fixed
/// script (noise included).
pub fn generate(script: &SceneScript) -> Vec<SynthFrame> {
    let s = &script.sensor;
    let delta_az = 2.0 * std::f64::consts::PI / s.n_az as f64;
    let delta_el = (s.beta_max - s.beta_min) / s.n_el as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);

    let mut frames = Vec::with_capacity(script.frames);
    for f in 0..script.frames {
        let origin = script.origin + script.sensor_velocity.scaled(f as f64);
        let movers_now: Vec<BoxPrimitive> = script
            .movers
            .iter()
            .map(|m| m.shape.shifted(m.velocity.scaled(f as f64)))
            .collect();

        let mut points = Vec::new();
        let mut moving = Vec::new();
        for i in 0..s.n_az {
            let az = -std::f64::consts::PI + (i as f64 + 0.5) * delta_az;
            if let Some((lo, hi)) = s.azimuth_window {
                if az < lo || az > hi {
                    continue;
                }
            }
            let (saz, caz) = az.sin_cos();
            for j in 0..s.n_el {
                let el = s.beta_min + (j as f64 + 0.5) * delta_el;
                let (sel, cel) = el.sin_cos();
                let dir = Point3::new(caz * cel, saz * cel, sel);

                let mut best = f64::INFINITY;
                let mut best_moving = false;
                for b in &script.static_boxes {
                    if let Some(t) = b.intersect(&origin, &dir) {
                        if t < best {
                            best = t;
                            best_moving = false;
                        }
                    }
                }
                for b in &movers_now {
                    if let Some(t) = b.intersect(&origin, &dir) {
                        if t < best {
                            best = t;
                            best_moving = true;
                        }
                    }
                }
                if best > s.r_max {
                    continue;
                }
                let range = if script.range_noise > 0.0 {
                    (best + script.range_noise * gaussian(&mut rng)).max(1e-3)
                } else {
                    best
                };
                points.push(dir.scaled(range));
                moving.push(best_moving);
            }
        }
        frames.push(SynthFrame {
            scan: Scan::new(points, PoseSE3::from_translation(origin), f),
            moving,
        });
    }
    frames
}

/// Writes the generated frames in the on-disk layout the pipeline reads:
/// `scans/<frame:06>.bin`, `labels/<frame:06>.label` (moving points get
/// class 252, static points 0), and `poses.txt`.
pub fn write_sequence(frames: &[SynthFrame], dir: &std::path::Path) -> Result<(), crate::Error> {
    use crate::dataset::{labels_to_bytes, poses_to_string, scan_to_bytes};
    let io_err = |path: &std::path::Path, e: std::io::Error| crate::Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let scan_dir = dir.join("scans");
    let label_dir = dir.join("labels");
    std::fs::create_dir_all(&scan_dir).map_err(|e| io_err(&scan_dir, e))?;
    std::fs::create_dir_all(&label_dir).map_err(|e| io_err(&label_dir, e))?;

    let mut poses = Vec::with_capacity(frames.len());
    for frame in frames {
        let scan_path = scan_dir.join(format!("{:06}.bin", frame.scan.frame_id));
        std::fs::write(&scan_path, scan_to_bytes(&frame.scan.points))
            .map_err(|e| io_err(&scan_path, e))?;
        let classes: Vec<u16> = frame
            .moving
            .iter()
            .map(|&m| if m { 252 } else { 0 })
            .collect();
        let label_path = label_dir.join(format!("{:06}.label", frame.scan.frame_id));
        std::fs::write(&label_path, labels_to_bytes(&classes))
            .map_err(|e| io_err(&label_path, e))?;
        poses.push(frame.scan.pose);
    }
    let pose_path = dir.join("poses.txt");
    std::fs::write(&pose_path, poses_to_string(&poses)).map_err(|e| io_err(&pose_path, e))?;
    Ok(())
}
