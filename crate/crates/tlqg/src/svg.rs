//! Minimal static SVG plots: trajectory polylines, landmark/obstacle discs,
//! 1σ covariance ellipses, and the log-log sweep chart. Output is plain XML
//! with no external references, deterministic for identical inputs.

use nalgebra::Matrix2;

use crate::filters::Covariance;
use crate::models::{Landmark, Obstacle, State};
use crate::montecarlo::SweepResult;
use crate::planner::{NominalPlan, PlanProblem};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 540.0;
const MARGIN: f64 = 40.0;

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

/// World-to-viewport mapping with uniform scale and flipped y.
struct Frame {
    min_x: f64,
    min_y: f64,
    scale: f64,
    height: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = (f64, f64)> + Clone) -> Frame {
        let mut min_x = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for (x, y) in xs {
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
        if !min_x.is_finite() {
            min_x = 0.0;
            max_x = 1.0;
            min_y = 0.0;
            max_y = 1.0;
        }
        let pad = 0.3;
        min_x -= pad;
        max_x += pad;
        min_y -= pad;
        max_y += pad;
        let scale = ((WIDTH - 2.0 * MARGIN) / (max_x - min_x).max(1e-9))
            .min((HEIGHT - 2.0 * MARGIN) / (max_y - min_y).max(1e-9));
        Frame {
            min_x,
            min_y,
            scale,
            height: HEIGHT,
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            MARGIN + (x - self.min_x) * self.scale,
            self.height - MARGIN - (y - self.min_y) * self.scale,
        )
    }

    fn len(&self, r: f64) -> f64 {
        r * self.scale
    }
}

struct Svg {
    body: String,
}

impl Svg {
    fn new() -> Svg {
        let mut body = String::new();
        body.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
             viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        ));
        Svg { body }
    }

    #[allow(clippy::too_many_arguments)]
    fn polyline(
        &mut self,
        frame: &Frame,
        pts: &[(f64, f64)],
        stroke: &str,
        width: f64,
        dash: &str,
    ) {
        if pts.is_empty() {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let (px, py) = frame.map(x, y);
                format!("{},{}", fmt(px), fmt(py))
            })
            .collect();
        let dash_attr = if dash.is_empty() {
            String::new()
        } else {
            format!(" stroke-dasharray=\"{dash}\"")
        };
        self.body.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{}\"{dash_attr}/>\n",
            coords.join(" "),
            fmt(width)
        ));
    }

    #[allow(clippy::too_many_arguments)]
    fn circle(
        &mut self,
        frame: &Frame,
        cx: f64,
        cy: f64,
        r: f64,
        fill: &str,
        stroke: &str,
        dash: &str,
    ) {
        let (px, py) = frame.map(cx, cy);
        let dash_attr = if dash.is_empty() {
            String::new()
        } else {
            format!(" stroke-dasharray=\"{dash}\"")
        };
        self.body.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{fill}\" stroke=\"{stroke}\"{dash_attr}/>\n",
            fmt(px),
            fmt(py),
            fmt(frame.len(r))
        ));
    }

    #[allow(clippy::too_many_arguments)]
    fn ellipse(
        &mut self,
        frame: &Frame,
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        angle_deg: f64,
        stroke: &str,
    ) {
        let (px, py) = frame.map(cx, cy);
        self.body.push_str(&format!(
            "<ellipse cx=\"0\" cy=\"0\" rx=\"{}\" ry=\"{}\" fill=\"none\" stroke=\"{stroke}\" \
             transform=\"translate({} {}) rotate({})\"/>\n",
            fmt(frame.len(rx)),
            fmt(frame.len(ry)),
            fmt(px),
            fmt(py),
            // The viewport y axis points down, so the rotation flips sign.
            fmt(-angle_deg),
        ));
    }

    fn text(&mut self, x: f64, y: f64, size: f64, s: &str) {
        self.body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"{}\">{}</text>\n",
            fmt(x),
            fmt(y),
            fmt(size),
            xml_escape(s)
        ));
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// 1σ ellipse (semi-axes, rotation in degrees) of a 2×2 covariance block.
fn sigma_ellipse(block: &Matrix2<f64>) -> (f64, f64, f64) {
    let eig = nalgebra::SymmetricEigen::new(*block);
    let r0 = eig.eigenvalues[0].max(0.0).sqrt();
    let r1 = eig.eigenvalues[1].max(0.0).sqrt();
    let v = eig.eigenvectors.column(0);
    let angle = v[1].atan2(v[0]).to_degrees();
    (r0, r1, angle)
}

fn world_points<'a>(
    states: &'a [State],
    landmarks: &'a [Landmark],
    obstacles: &'a [Obstacle],
    goal: &'a State,
) -> impl Iterator<Item = (f64, f64)> + Clone + 'a {
    states
        .iter()
        .map(|s| (s.x, s.y))
        .chain(landmarks.iter().map(|l| (l.px, l.py)))
        .chain(obstacles.iter().flat_map(|o| {
            let r = o.radius + o.safety_margin;
            [(o.cx - r, o.cy - r), (o.cx + r, o.cy + r)]
        }))
        .chain(std::iter::once((goal.x, goal.y)))
}

fn draw_world(svg: &mut Svg, frame: &Frame, problem: &PlanProblem) {
    for lm in &problem.world.landmarks {
        svg.circle(frame, lm.px, lm.py, 0.08, "#f4e9c7", "#c9b458", "");
    }
    for o in &problem.world.obstacles {
        svg.circle(frame, o.cx, o.cy, o.radius, "#b0b0b0", "#555555", "");
        svg.circle(
            frame,
            o.cx,
            o.cy,
            o.radius + o.safety_margin,
            "none",
            "#999999",
            "4 3",
        );
    }
    let g = &problem.goal;
    svg.circle(
        frame,
        g.x,
        g.y,
        problem.goal_radius,
        "none",
        "#2e8b57",
        "5 3",
    );
}

/// Interval between covariance ellipses along a plotted trajectory.
pub const ELLIPSE_STRIDE: usize = 5;

/// Planned trajectory with landmarks, obstacles (with margins), the goal
/// ball, and 1σ covariance ellipses every `ELLIPSE_STRIDE` steps.
pub fn render_plan_svg(plan: &NominalPlan, problem: &PlanProblem) -> String {
    let frame = Frame::fit(world_points(
        &plan.states,
        &problem.world.landmarks,
        &problem.world.obstacles,
        &problem.goal,
    ));
    let mut svg = Svg::new();
    draw_world(&mut svg, &frame, problem);
    let path: Vec<(f64, f64)> = plan.states.iter().map(|s| (s.x, s.y)).collect();
    svg.polyline(&frame, &path, "#1f5fbf", 2.0, "");
    for (t, cov) in plan.covariances.iter().enumerate() {
        if t % ELLIPSE_STRIDE == 0 || t == plan.covariances.len() - 1 {
            let (rx, ry, angle) = sigma_ellipse(&cov.position_block());
            if rx > 1e-9 {
                svg.ellipse(
                    &frame,
                    plan.states[t].x,
                    plan.states[t].y,
                    rx,
                    ry,
                    angle,
                    "#7a9fd4",
                );
            }
        }
    }
    svg.text(
        MARGIN,
        24.0,
        14.0,
        "planned trajectory with 1-sigma covariance ellipses",
    );
    svg.finish()
}

/// Executed vs estimated vs nominal paths over the same world.
pub fn render_exec_svg(
    plan: &NominalPlan,
    problem: &PlanProblem,
    executed: &[State],
    estimated: &[State],
    est_covariances: &[Covariance],
) -> String {
    let frame = Frame::fit(
        world_points(
            &plan.states,
            &problem.world.landmarks,
            &problem.world.obstacles,
            &problem.goal,
        )
        .chain(executed.iter().map(|s| (s.x, s.y)).collect::<Vec<_>>()),
    );
    let mut svg = Svg::new();
    draw_world(&mut svg, &frame, problem);
    let nominal: Vec<(f64, f64)> = plan.states.iter().map(|s| (s.x, s.y)).collect();
    let exec: Vec<(f64, f64)> = executed.iter().map(|s| (s.x, s.y)).collect();
    let est: Vec<(f64, f64)> = estimated.iter().map(|s| (s.x, s.y)).collect();
    svg.polyline(&frame, &nominal, "#1f5fbf", 1.5, "6 4");
    svg.polyline(&frame, &exec, "#c23b22", 2.0, "");
    svg.polyline(&frame, &est, "#2e8b57", 1.5, "2 3");
    for (t, cov) in est_covariances.iter().enumerate() {
        if t % ELLIPSE_STRIDE == 0 || t == est_covariances.len() - 1 {
            let (rx, ry, angle) = sigma_ellipse(&cov.position_block());
            if rx > 1e-9 && t < estimated.len() {
                svg.ellipse(
                    &frame,
                    estimated[t].x,
                    estimated[t].y,
                    rx,
                    ry,
                    angle,
                    "#9cc5a1",
                );
            }
        }
    }
    svg.text(
        MARGIN,
        24.0,
        14.0,
        "nominal (dashed blue), executed (red), estimated (dotted green)",
    );
    svg.finish()
}

/// log|mean cost gap| against log ε with the fitted slope annotated.
pub fn render_sweep_svg(sweep: &SweepResult) -> String {
    let pts: Vec<(f64, f64)> = sweep
        .entries
        .iter()
        .filter(|e| e.mean_cost_gap.abs() > 0.0)
        .map(|e| (e.epsilon.ln(), e.mean_cost_gap.abs().ln()))
        .collect();
    let frame = Frame::fit(pts.iter().copied());
    let mut svg = Svg::new();
    svg.polyline(&frame, &pts, "#1f5fbf", 1.5, "");
    for &(x, y) in &pts {
        let (px, py) = frame.map(x, y);
        svg.body.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"3.5\" fill=\"#c23b22\"/>\n",
            fmt(px),
            fmt(py)
        ));
    }
    let label = match sweep.fitted_slope() {
        Some(s) => format!("log|mean cost gap| vs log epsilon, fitted slope {s:.3}"),
        None => "log|mean cost gap| vs log epsilon (no fit)".to_string(),
    };
    svg.text(MARGIN, 24.0, 14.0, &label);
    svg.finish()
}
