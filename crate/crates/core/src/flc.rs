//! Two-input / single-output Mamdani fuzzy inference.
//!
//! The controller evaluates a 7x7 rule table over normalized error and
//! error-delta inputs, clips the output terms with min-activation,
//! aggregates with max, and defuzzifies with an exact center-of-gravity
//! integration of the aggregated piecewise-linear shape. No sampling is
//! involved, so the result is a deterministic function of the inputs.

/// Trapezoidal membership function with breakpoints `a <= b <= c <= d`;
/// degree is 1 on `[b, c]`, 0 outside `[a, d]`, and linear in between.
/// A triangle is the special case `b == c`.
#[derive(Clone, Copy, Debug)]
pub struct MembershipFunction {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub label: &'static str,
}

impl MembershipFunction {
    pub fn new(a: f64, b: f64, c: f64, d: f64, label: &'static str) -> MembershipFunction {
        assert!(
            a <= b && b <= c && c <= d,
            "membership breakpoints must be ordered: {label} ({a}, {b}, {c}, {d})"
        );
        MembershipFunction { a, b, c, d, label }
    }

    pub fn degree(&self, x: f64) -> f64 {
        if x < self.a || x > self.d {
            0.0
        } else if x < self.b {
            (x - self.a) / (self.b - self.a)
        } else if x <= self.c {
            1.0
        } else {
            (self.d - x) / (self.d - self.c)
        }
    }
}

/// An ordered family of membership functions over the universe `[-1, 1]`.
///
/// Both constructors build Ruspini partitions: adjacent-peak supports so
/// term degrees sum to one everywhere in the universe, with the outermost
/// terms saturating beyond the clamp boundary.
#[derive(Clone, Debug)]
pub struct TermSet {
    terms: Vec<MembershipFunction>,
}

impl TermSet {
    /// Seven input terms NB, NM, NS, Z, PS, PM, PB with peaks uniformly
    /// spaced at thirds.
    pub fn input_terms() -> TermSet {
        let t = 1.0 / 3.0;
        TermSet {
            terms: vec![
                MembershipFunction::new(-2.0, -2.0, -1.0, -2.0 * t, "NB"),
                MembershipFunction::new(-1.0, -2.0 * t, -2.0 * t, -t, "NM"),
                MembershipFunction::new(-2.0 * t, -t, -t, 0.0, "NS"),
                MembershipFunction::new(-t, 0.0, 0.0, t, "Z"),
                MembershipFunction::new(0.0, t, t, 2.0 * t, "PS"),
                MembershipFunction::new(t, 2.0 * t, 2.0 * t, 1.0, "PM"),
                MembershipFunction::new(2.0 * t, 1.0, 2.0, 2.0, "PB"),
            ],
        }
    }

    /// Nine output terms NH, NB, NM, NS, Z, PS, PM, PB, PH with peaks
    /// uniformly spaced at quarters.
    pub fn output_terms() -> TermSet {
        TermSet {
            terms: vec![
                MembershipFunction::new(-2.0, -2.0, -1.0, -0.75, "NH"),
                MembershipFunction::new(-1.0, -0.75, -0.75, -0.5, "NB"),
                MembershipFunction::new(-0.75, -0.5, -0.5, -0.25, "NM"),
                MembershipFunction::new(-0.5, -0.25, -0.25, 0.0, "NS"),
                MembershipFunction::new(-0.25, 0.0, 0.0, 0.25, "Z"),
                MembershipFunction::new(0.0, 0.25, 0.25, 0.5, "PS"),
                MembershipFunction::new(0.25, 0.5, 0.5, 0.75, "PM"),
                MembershipFunction::new(0.5, 0.75, 0.75, 1.0, "PB"),
                MembershipFunction::new(0.75, 1.0, 2.0, 2.0, "PH"),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn term(&self, idx: usize) -> &MembershipFunction {
        &self.terms[idx]
    }

    pub fn degrees(&self, x: f64) -> Vec<f64> {
        self.terms.iter().map(|t| t.degree(x)).collect()
    }
}

/// Output-term indices into [`TermSet::output_terms`].
mod out {
    pub const NH: usize = 0;
    pub const NB: usize = 1;
    pub const NM: usize = 2;
    pub const NS: usize = 3;
    pub const Z: usize = 4;
    pub const PS: usize = 5;
    pub const PM: usize = 6;
    pub const PB: usize = 7;
    pub const PH: usize = 8;
}

/// MacVicar-Whelan style 7x7 decision table: rows index the error term,
/// columns the error-delta term, entries the output term.
#[derive(Clone, Debug)]
pub struct RuleTable {
    entries: [[usize; 7]; 7],
}

impl RuleTable {
    pub fn standard() -> RuleTable {
        use out::*;
        RuleTable {
            entries: [
                [NH, NH, NB, NB, NM, NS, Z],
                [NH, NH, NB, NM, NS, Z, PS],
                [NB, NB, NM, NS, Z, PS, PM],
                [NB, NM, NS, Z, PS, PM, PB],
                [NM, NS, Z, PS, PM, PB, PB],
                [NS, Z, PS, PM, PB, PH, PH],
                [Z, PS, PM, PB, PB, PH, PH],
            ],
        }
    }

    pub fn entry(&self, e_term: usize, de_term: usize) -> usize {
        self.entries[e_term][de_term]
    }
}

/// Two-input single-output Mamdani controller: min activation, max
/// aggregation, exact center-of-gravity defuzzification. Stateless and
/// immutable after construction.
#[derive(Clone, Debug)]
pub struct MisoFlc {
    e_terms: TermSet,
    de_terms: TermSet,
    out_terms: TermSet,
    rules: RuleTable,
}

impl Default for MisoFlc {
    fn default() -> Self {
        Self::standard()
    }
}

impl MisoFlc {
    pub fn standard() -> MisoFlc {
        MisoFlc {
            e_terms: TermSet::input_terms(),
            de_terms: TermSet::input_terms(),
            out_terms: TermSet::output_terms(),
            rules: RuleTable::standard(),
        }
    }

    pub fn rules(&self) -> &RuleTable {
        &self.rules
    }

    pub fn input_term_set(&self) -> &TermSet {
        &self.e_terms
    }

    pub fn output_term_set(&self) -> &TermSet {
        &self.out_terms
    }

    /// Evaluates the controller on normalized inputs in `[-1, 1]`.
    ///
    /// Callers clamp before invoking; non-finite inputs are a fatal error.
    pub fn evaluate(&self, e_norm: f64, de_norm: f64) -> f64 {
        assert!(
            e_norm.is_finite() && de_norm.is_finite(),
            "non-finite FLC input: e={e_norm} de={de_norm}"
        );
        let mu_e = self.e_terms.degrees(e_norm);
        let mu_de = self.de_terms.degrees(de_norm);

        // Min activation per fired rule, max aggregation per output term.
        let mut clips = [0.0f64; 9];
        for (i, &we) in mu_e.iter().enumerate() {
            if we <= 0.0 {
                continue;
            }
            for (j, &wd) in mu_de.iter().enumerate() {
                let w = we.min(wd);
                if w > 0.0 {
                    let k = self.rules.entry(i, j);
                    if w > clips[k] {
                        clips[k] = w;
                    }
                }
            }
        }

        centroid(&self.out_terms, &clips)
    }
}

/// A non-vertical line segment of the clipped output shape.
#[derive(Clone, Copy)]
struct Segment {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

/// Exact center of gravity of `max_k min(clips[k], term_k(x))` over the
/// universe `[-1, 1]`.
///
/// The aggregate of clipped trapezoids is piecewise linear; its breakpoints
/// are the clipped-corner abscissas plus pairwise segment crossings. Between
/// consecutive breakpoints the aggregate is a single linear piece, so the
/// area and first moment integrate in closed form.
fn centroid(terms: &TermSet, clips: &[f64; 9]) -> f64 {
    const LO: f64 = -1.0;
    const HI: f64 = 1.0;

    let mut segments: Vec<Segment> = Vec::new();
    let mut xs: Vec<f64> = vec![LO, HI];

    for (k, &h) in clips.iter().enumerate() {
        if h <= 0.0 {
            continue;
        }
        let t = terms.term(k);
        // Corners of the trapezoid clipped at height h.
        let rise_x = t.a + (t.b - t.a) * h;
        let fall_x = t.d - (t.d - t.c) * h;
        if t.b > t.a {
            segments.push(Segment { x0: t.a, y0: 0.0, x1: rise_x, y1: h });
        }
        segments.push(Segment { x0: rise_x, y0: h, x1: fall_x, y1: h });
        if t.d > t.c {
            segments.push(Segment { x0: fall_x, y0: h, x1: t.d, y1: 0.0 });
        }
        for x in [t.a, rise_x, fall_x, t.d] {
            if (LO..=HI).contains(&x) {
                xs.push(x);
            }
        }
    }

    if segments.is_empty() {
        return 0.0;
    }

    // Crossings between segments of different clip levels.
    for i in 0..segments.len() {
        for j in (i + 1)..segments.len() {
            if let Some(x) = crossing(&segments[i], &segments[j]) {
                if (LO..=HI).contains(&x) {
                    xs.push(x);
                }
            }
        }
    }

    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let agg = |x: f64| -> f64 {
        let mut best = 0.0f64;
        for (k, &h) in clips.iter().enumerate() {
            if h > 0.0 {
                let v = terms.term(k).degree(x).min(h);
                if v > best {
                    best = v;
                }
            }
        }
        best
    };

    let mut area = 0.0f64;
    let mut moment = 0.0f64;
    for w in xs.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let width = x1 - x0;
        if width <= 0.0 {
            continue;
        }
        let (y0, y1) = (agg(x0), agg(x1));
        area += 0.5 * (y0 + y1) * width;
        moment += width / 6.0 * (y0 * (2.0 * x0 + x1) + y1 * (x0 + 2.0 * x1));
    }

    if area <= 0.0 {
        // Unreachable with a Ruspini partition; defensively centered.
        return 0.0;
    }
    moment / area
}

/// Intersection abscissa of two segments, if it falls inside both spans.
fn crossing(s1: &Segment, s2: &Segment) -> Option<f64> {
    let dx1 = s1.x1 - s1.x0;
    let dx2 = s2.x1 - s2.x0;
    if dx1 <= 0.0 || dx2 <= 0.0 {
        return None;
    }
    let m1 = (s1.y1 - s1.y0) / dx1;
    let m2 = (s2.y1 - s2.y0) / dx2;
    let dm = m1 - m2;
    if dm == 0.0 {
        return None;
    }
    let x = (m1 * s1.x0 - s1.y0 - m2 * s2.x0 + s2.y0) / dm;
    let lo = s1.x0.max(s2.x0);
    let hi = s1.x1.min(s2.x1);
    if x >= lo && x <= hi {
        Some(x)
    } else {
        None
    }
}
