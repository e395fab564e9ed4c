//! Span-level scoring: event alignment, per-(type, argument) counts,
//! micro-averaged P/R/F1 and error categorization.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::event::{canonical_value, ArgKind, SdohEvent, SdohType, Span};
use crate::pipeline::is_non_specific;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MatchCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64) -> Self {
        MatchCounts { tp, fp, fn_ }
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn swapped(self) -> Self {
        MatchCounts { tp: self.tp, fp: self.fn_, fn_: self.fp }
    }

    pub fn prf(&self) -> Prf {
        Prf::from_counts(*self)
    }
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

impl std::ops::Add for MatchCounts {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

/// Precision, recall and F1, each 0 when its denominator is 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(c: MatchCounts) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1 }
    }
}

fn type_index(t: SdohType) -> usize {
    SdohType::ALL.iter().position(|x| *x == t).expect("closed enum")
}

/// Counts for every (type, argument kind) cell.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CountTable {
    cells: [[MatchCounts; 8]; 5],
}

impl CountTable {
    pub fn get(&self, sdoh: SdohType, kind: ArgKind) -> MatchCounts {
        self.cells[type_index(sdoh)][kind.index()]
    }

    pub fn get_mut(&mut self, sdoh: SdohType, kind: ArgKind) -> &mut MatchCounts {
        &mut self.cells[type_index(sdoh)][kind.index()]
    }

    pub fn merge(&mut self, other: &CountTable) {
        for (a, b) in self.cells.iter_mut().flatten().zip(other.cells.iter().flatten()) {
            *a += *b;
        }
    }

    pub fn total(&self) -> MatchCounts {
        self.cells.iter().flatten().fold(MatchCounts::default(), |acc, c| acc + *c)
    }

    pub fn type_total(&self, sdoh: SdohType) -> MatchCounts {
        self.cells[type_index(sdoh)].iter().fold(MatchCounts::default(), |acc, c| acc + *c)
    }

    pub fn swapped(&self) -> CountTable {
        let mut out = *self;
        for c in out.cells.iter_mut().flatten() {
            *c = c.swapped();
        }
        out
    }

    /// Non-empty cells in (type, kind) order.
    pub fn iter(&self) -> impl Iterator<Item = (SdohType, ArgKind, MatchCounts)> + '_ {
        SdohType::ALL.into_iter().flat_map(move |t| {
            ArgKind::ALL.into_iter().map(move |k| (t, k, self.get(t, k))).filter(|(_, _, c)| !c.is_empty())
        })
    }
}

/// Pairs of (pred index, gold index) plus the unmatched indices of each side.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Alignment {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gold: Vec<usize>,
}

fn valued(kind: ArgKind) -> bool {
    matches!(kind, ArgKind::Status | ArgKind::Type)
}

/// True when the predicted argument counts as correct against the gold one:
/// overlapping spans and, for labelled arguments, equal labels.
fn arg_matches(kind: ArgKind, pred: &SdohEvent, gold: &SdohEvent) -> bool {
    match (pred.span_of(kind), gold.span_of(kind)) {
        (Some(p), Some(g)) => {
            p.overlaps(g)
                && (!valued(kind)
                    || pred.value_of(kind).map(canonical_value) == gold.value_of(kind).map(canonical_value))
        }
        _ => false,
    }
}

fn pair_tp(pred: &SdohEvent, gold: &SdohEvent) -> [u32; 8] {
    let mut tp = [0; 8];
    for kind in ArgKind::ALL {
        if arg_matches(kind, pred, gold) {
            tp[kind.index()] = 1;
        }
    }
    tp
}

/// Matching objective, compared lexicographically: pair count, total TP,
/// then TP per argument kind. All terms add over pairs.
type Objective = [u32; 10];

fn pair_objective(pred: &SdohEvent, gold: &SdohEvent) -> Objective {
    let tp = pair_tp(pred, gold);
    let mut o = [0; 10];
    o[0] = 1;
    o[1] = tp.iter().sum();
    o[2..].copy_from_slice(&tp);
    o
}

fn add(a: Objective, b: Objective) -> Objective {
    let mut o = a;
    for (x, y) in o.iter_mut().zip(b) {
        *x += y;
    }
    o
}

fn linkable(p: &SdohEvent, g: &SdohEvent) -> bool {
    p.sdoh == g.sdoh && p.trigger.overlaps(&g.trigger)
}

/// Components with more events than this on their smaller side use the
/// greedy matcher instead of the exact one.
pub const EXACT_LIMIT: usize = 16;

/// Exact matching within one connected component. `rows` index the larger
/// side; `cols` (at most `EXACT_LIMIT`) the smaller. `val(r, c)` is `None`
/// when the two cannot be paired.
fn exact_component(
    rows: usize,
    cols: usize,
    val: &dyn Fn(usize, usize) -> Option<Objective>,
) -> Vec<(usize, usize)> {
    fn best(
        r: usize,
        mask: u32,
        rows: usize,
        cols: usize,
        val: &dyn Fn(usize, usize) -> Option<Objective>,
        memo: &mut HashMap<(usize, u32), (Objective, Option<usize>)>,
    ) -> Objective {
        if r == rows {
            return [0; 10];
        }
        if let Some((o, _)) = memo.get(&(r, mask)) {
            return *o;
        }
        let mut top = best(r + 1, mask, rows, cols, val, memo);
        let mut choice = None;
        for c in 0..cols {
            if mask & (1 << c) != 0 {
                continue;
            }
            if let Some(v) = val(r, c) {
                let o = add(v, best(r + 1, mask | (1 << c), rows, cols, val, memo));
                if o > top {
                    top = o;
                    choice = Some(c);
                }
            }
        }
        memo.insert((r, mask), (top, choice));
        top
    }
    let mut memo = HashMap::new();
    best(0, 0, rows, cols, val, &mut memo);
    let mut pairs = Vec::new();
    let mut mask = 0u32;
    for r in 0..rows {
        if let Some((_, Some(c))) = memo.get(&(r, mask)).copied() {
            pairs.push((r, c));
            mask |= 1 << c;
        }
    }
    pairs
}

/// Pairs by descending trigger overlap, ties to the earlier gold start.
fn greedy_pairs(pred: &[SdohEvent], gold: &[SdohEvent], ps: &[usize], gs: &[usize]) -> Vec<(usize, usize)> {
    let mut cands: Vec<(usize, usize, usize)> = Vec::new();
    for &p in ps {
        for &g in gs {
            if linkable(&pred[p], &gold[g]) {
                cands.push((pred[p].trigger.overlap(&gold[g].trigger), p, g));
            }
        }
    }
    cands.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(gold[a.2].trigger.start.cmp(&gold[b.2].trigger.start))
            .then(a.2.cmp(&b.2))
            .then(pred[a.1].trigger.start.cmp(&pred[b.1].trigger.start))
            .then(a.1.cmp(&b.1))
    });
    let (mut pu, mut gu) = (vec![false; pred.len()], vec![false; gold.len()]);
    let mut pairs = Vec::new();
    for (_, p, g) in cands {
        if !pu[p] && !gu[g] {
            pu[p] = true;
            gu[g] = true;
            pairs.push((p, g));
        }
    }
    pairs
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut x = x;
    while parent[x] != r {
        let next = parent[x];
        parent[x] = r;
        x = next;
    }
    r
}

fn finish(pairs: Vec<(usize, usize)>, n_pred: usize, n_gold: usize) -> Alignment {
    let mut pairs = pairs;
    pairs.sort();
    let mut pu = vec![false; n_pred];
    let mut gu = vec![false; n_gold];
    for &(p, g) in &pairs {
        pu[p] = true;
        gu[g] = true;
    }
    Alignment {
        pairs,
        unmatched_pred: (0..n_pred).filter(|i| !pu[*i]).collect(),
        unmatched_gold: (0..n_gold).filter(|i| !gu[*i]).collect(),
    }
}

/// One-to-one alignment of same-type events with overlapping triggers,
/// maximizing the number of pairs, then argument TP. The result is a
/// maximum of a symmetric objective, so swapping sides swaps the pairs.
pub fn align_events(pred: &[SdohEvent], gold: &[SdohEvent]) -> Alignment {
    let (np, ng) = (pred.len(), gold.len());
    // union-find over preds (0..np) and golds (np..np+ng)
    let mut parent: Vec<usize> = (0..np + ng).collect();
    for (p, pe) in pred.iter().enumerate() {
        for (g, ge) in gold.iter().enumerate() {
            if linkable(pe, ge) {
                let (a, b) = (find(&mut parent, p), find(&mut parent, np + g));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut comps: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for i in 0..np + ng {
        let root = find(&mut parent, i);
        let entry = comps.entry(root).or_default();
        if i < np {
            entry.0.push(i);
        } else {
            entry.1.push(i - np);
        }
    }
    let mut pairs = Vec::new();
    for (ps, gs) in comps.values() {
        if ps.is_empty() || gs.is_empty() {
            continue;
        }
        if ps.len().min(gs.len()) > EXACT_LIMIT {
            log::warn!("alignment component of {}x{} events matched greedily", ps.len(), gs.len());
            pairs.extend(greedy_pairs(pred, gold, ps, gs));
            continue;
        }
        let val = |p: usize, g: usize| linkable(&pred[ps[p]], &gold[gs[g]]).then(|| pair_objective(&pred[ps[p]], &gold[gs[g]]));
        if ps.len() >= gs.len() {
            for (r, c) in exact_component(ps.len(), gs.len(), &val) {
                pairs.push((ps[r], gs[c]));
            }
        } else {
            let flipped = |g: usize, p: usize| val(p, g);
            for (r, c) in exact_component(gs.len(), ps.len(), &flipped) {
                pairs.push((ps[c], gs[r]));
            }
        }
    }
    finish(pairs, np, ng)
}

/// Reference matcher that enumerates every one-to-one matching. Exponential;
/// intended for auditing [`align_events`] on small inputs.
pub fn align_events_exhaustive(pred: &[SdohEvent], gold: &[SdohEvent]) -> Alignment {
    fn go(
        g: usize,
        pred: &[SdohEvent],
        gold: &[SdohEvent],
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        acc: Objective,
        best: &mut (Objective, Vec<(usize, usize)>),
    ) {
        if g == gold.len() {
            if acc > best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        go(g + 1, pred, gold, used, cur, acc, best);
        for p in 0..pred.len() {
            if !used[p] && linkable(&pred[p], &gold[g]) {
                used[p] = true;
                cur.push((p, g));
                go(g + 1, pred, gold, used, cur, add(acc, pair_objective(&pred[p], &gold[g])), best);
                cur.pop();
                used[p] = false;
            }
        }
    }
    let mut best = ([0; 10], Vec::new());
    go(0, pred, gold, &mut vec![false; pred.len()], &mut Vec::new(), [0; 10], &mut best);
    finish(best.1, pred.len(), gold.len())
}

/// Counts for one note under a given alignment.
pub fn count_alignment(pred: &[SdohEvent], gold: &[SdohEvent], alignment: &Alignment) -> CountTable {
    let mut table = CountTable::default();
    for &(p, g) in &alignment.pairs {
        let (pe, ge) = (&pred[p], &gold[g]);
        for kind in ArgKind::ALL {
            let cell = table.get_mut(ge.sdoh, kind);
            match (pe.span_of(kind).is_some(), ge.span_of(kind).is_some()) {
                (true, true) if arg_matches(kind, pe, ge) => cell.tp += 1,
                (true, true) => {
                    cell.fp += 1;
                    cell.fn_ += 1;
                }
                (true, false) => cell.fp += 1,
                (false, true) => cell.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    for &p in &alignment.unmatched_pred {
        for kind in pred[p].present_kinds() {
            table.get_mut(pred[p].sdoh, kind).fp += 1;
        }
    }
    for &g in &alignment.unmatched_gold {
        for kind in gold[g].present_kinds() {
            table.get_mut(gold[g].sdoh, kind).fn_ += 1;
        }
    }
    table
}

/// Aligns and counts one note.
pub fn score_document(pred: &[SdohEvent], gold: &[SdohEvent]) -> CountTable {
    count_alignment(pred, gold, &align_events(pred, gold))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub label: String,
    #[serde(flatten)]
    pub counts: MatchCounts,
    #[serde(flatten)]
    pub prf: Prf,
}

impl ScoreRow {
    fn new(label: impl Into<String>, counts: MatchCounts) -> Self {
        ScoreRow { label: label.into(), counts, prf: counts.prf() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRow {
    pub sdoh: SdohType,
    pub kind: ArgKind,
    #[serde(flatten)]
    pub counts: MatchCounts,
    #[serde(flatten)]
    pub prf: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub documents: usize,
    /// Cells with at least one predicted or gold element.
    pub cells: Vec<CellRow>,
    /// One row per type with any elements, in type order.
    pub per_type: Vec<ScoreRow>,
    pub micro: ScoreRow,
    #[serde(skip)]
    pub table: CountTable,
}

/// Sums per-document tables (order-independent) into a report.
pub fn aggregate<'a>(tables: impl IntoIterator<Item = &'a CountTable>) -> ScoreReport {
    let mut total = CountTable::default();
    let mut documents = 0;
    for t in tables {
        total.merge(t);
        documents += 1;
    }
    report_from_table(total, documents)
}

pub fn report_from_table(table: CountTable, documents: usize) -> ScoreReport {
    let cells = table
        .iter()
        .map(|(sdoh, kind, counts)| CellRow { sdoh, kind, counts, prf: counts.prf() })
        .collect();
    let per_type = SdohType::ALL
        .into_iter()
        .filter(|t| !table.type_total(*t).is_empty())
        .map(|t| ScoreRow::new(t.as_str(), table.type_total(t)))
        .collect();
    ScoreReport { documents, cells, per_type, micro: ScoreRow::new("micro", table.total()), table }
}

impl ScoreReport {
    /// Human-readable table: one row per type, then the micro row.
    pub fn render_table(&self, detail: bool) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<22} {:>6} {:>6} {:>6} {:>9} {:>7} {:>8}", "SDOH", "TP", "FP", "FN", "Precision", "Recall", "Micro-F1");
        let row = |s: &mut String, label: &str, c: MatchCounts, p: Prf| {
            let _ = writeln!(
                s,
                "{:<22} {:>6} {:>6} {:>6} {:>9.3} {:>7.3} {:>8.3}",
                label, c.tp, c.fp, c.fn_, p.precision, p.recall, p.f1
            );
        };
        for r in &self.per_type {
            row(&mut s, &r.label, r.counts, r.prf);
            if detail {
                for c in self.cells.iter().filter(|c| c.sdoh.as_str() == r.label) {
                    row(&mut s, &format!("  {}", c.kind), c.counts, c.prf);
                }
            }
        }
        row(&mut s, "Overall (micro)", self.micro.counts, self.micro.prf);
        let _ = writeln!(s, "documents: {}", self.documents);
        s
    }
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_table(false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCategory {
    /// Gold has several events of a type; the prediction found only one.
    OneOfMany,
    /// A vague duration/frequency/history/amount/type value.
    NonSpecific,
    /// A matched event lacks an argument the gold event has.
    MissingValue,
    /// A matched Drug event lacks the gold method or type.
    MissingDrugMethodType,
    /// Overlapping argument with a different label.
    IncorrectValue,
    Other,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 6] = [
        ErrorCategory::OneOfMany,
        ErrorCategory::NonSpecific,
        ErrorCategory::MissingValue,
        ErrorCategory::MissingDrugMethodType,
        ErrorCategory::IncorrectValue,
        ErrorCategory::Other,
    ];

    pub fn describe(self) -> &'static str {
        match self {
            ErrorCategory::OneOfMany => "one event of many with the same type",
            ErrorCategory::NonSpecific => "non-specific argument value",
            ErrorCategory::MissingValue => "missing values in an extracted event",
            ErrorCategory::MissingDrugMethodType => "missing method/type for drug event",
            ErrorCategory::IncorrectValue => "incorrect label value",
            ErrorCategory::Other => "other (review manually)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorTag {
    pub note_id: String,
    pub sdoh: SdohType,
    pub kind: ArgKind,
    pub category: ErrorCategory,
    pub fp: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
    pub pred: Option<String>,
    pub gold: Option<String>,
}

fn describe_arg(event: &SdohEvent, kind: ArgKind) -> Option<String> {
    let span: &Span = event.span_of(kind)?;
    Some(match event.value_of(kind) {
        Some(v) => format!("{} [{},{}) ={}", span.text, span.start, span.end, v),
        None => format!("{} [{},{})", span.text, span.start, span.end),
    })
}

/// Tags every FP/FN element of one note with an error category. Tags on
/// unmatched events cover the whole event (trigger plus arguments).
pub fn error_report(note_id: &str, pred: &[SdohEvent], gold: &[SdohEvent]) -> Vec<ErrorTag> {
    let alignment = align_events(pred, gold);
    let mut tags = Vec::new();
    let count = |events: &[SdohEvent], t: SdohType| events.iter().filter(|e| e.sdoh == t).count();
    for &(p, g) in &alignment.pairs {
        let (pe, ge) = (&pred[p], &gold[g]);
        for kind in ArgKind::ALL {
            let (ps, gs) = (pe.span_of(kind), ge.span_of(kind));
            let category = match (ps, gs) {
                (Some(_), Some(_)) if arg_matches(kind, pe, ge) => continue,
                (None, None) => continue,
                (Some(a), Some(b)) if a.overlaps(b) && valued(kind) => ErrorCategory::IncorrectValue,
                (Some(a), _) if kind != ArgKind::Trigger && is_non_specific(&a.text) => ErrorCategory::NonSpecific,
                (None, Some(_)) if ge.sdoh == SdohType::Drug && matches!(kind, ArgKind::Method | ArgKind::Type) => {
                    ErrorCategory::MissingDrugMethodType
                }
                (None, Some(_)) => ErrorCategory::MissingValue,
                _ => ErrorCategory::Other,
            };
            tags.push(ErrorTag {
                note_id: note_id.to_string(),
                sdoh: ge.sdoh,
                kind,
                category,
                fp: ps.is_some() as u32,
                fn_: gs.is_some() as u32,
                pred: describe_arg(pe, kind),
                gold: describe_arg(ge, kind),
            });
        }
    }
    for &g in &alignment.unmatched_gold {
        let ge = &gold[g];
        let matched_of_type = alignment.pairs.iter().filter(|(_, gi)| gold[*gi].sdoh == ge.sdoh).count();
        let category = if count(gold, ge.sdoh) >= 2 && count(pred, ge.sdoh) == 1 && matched_of_type == 1 {
            ErrorCategory::OneOfMany
        } else {
            ErrorCategory::Other
        };
        tags.push(ErrorTag {
            note_id: note_id.to_string(),
            sdoh: ge.sdoh,
            kind: ArgKind::Trigger,
            category,
            fp: 0,
            fn_: ge.present_kinds().count() as u32,
            pred: None,
            gold: describe_arg(ge, ArgKind::Trigger),
        });
    }
    for &p in &alignment.unmatched_pred {
        let pe = &pred[p];
        tags.push(ErrorTag {
            note_id: note_id.to_string(),
            sdoh: pe.sdoh,
            kind: ArgKind::Trigger,
            category: ErrorCategory::Other,
            fp: pe.present_kinds().count() as u32,
            fn_: 0,
            pred: describe_arg(pe, ArgKind::Trigger),
            gold: None,
        });
    }
    tags
}

/// Per-category tag counts, every category listed.
pub fn summarize_errors(tags: &[ErrorTag]) -> BTreeMap<ErrorCategory, usize> {
    let mut out: BTreeMap<ErrorCategory, usize> = ErrorCategory::ALL.iter().map(|c| (*c, 0)).collect();
    for t in tags {
        *out.entry(t.category).or_default() += 1;
    }
    out
}

pub fn render_error_summary(tags: &[ErrorTag]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<40} {:>6}", "Error type", "Count");
    for (cat, n) in summarize_errors(tags) {
        let _ = writeln!(s, "{:<40} {:>6}", cat.describe(), n);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::prompt2_gold;

    fn sp(s: usize, e: usize) -> Span {
        Span::new(s, e, "x".repeat(e - s))
    }

    fn ev(t: SdohType, s: usize, e: usize) -> SdohEvent {
        SdohEvent::new(t, sp(s, e))
    }

    fn figure1() -> SdohEvent {
        SdohEvent::new(SdohType::Alcohol, Span::new(0, 6, "drinks"))
            .with_status(Span::new(0, 6, "drinks"), "current")
            .with_span(ArgKind::Amount, Span::new(7, 14, "a glass"))
            .with_type(Span::new(18, 22, "wine"), None)
            .with_span(ArgKind::Frequency, Span::new(23, 33, "1-2x/month"))
    }

    #[test]
    fn identity_scores_perfectly() {
        let gold = vec![figure1()];
        let t = score_document(&gold, &gold);
        for kind in [ArgKind::Trigger, ArgKind::Status, ArgKind::Type, ArgKind::Amount, ArgKind::Frequency] {
            assert_eq!(t.get(SdohType::Alcohol, kind), MatchCounts::new(1, 0, 0), "{kind}");
        }
        assert_eq!(t.total(), MatchCounts::new(5, 0, 0));
        let t = score_document(&prompt2_gold(), &prompt2_gold());
        assert_eq!((t.total().fp, t.total().fn_), (0, 0));
    }

    #[test]
    fn overlap_matching() {
        let a = align_events(&[ev(SdohType::Drug, 10, 17)], &[ev(SdohType::Drug, 12, 20)]);
        assert_eq!(a.pairs, vec![(0, 0)]);
        let a = align_events(&[ev(SdohType::Drug, 10, 17)], &[ev(SdohType::Alcohol, 10, 17)]);
        assert!(a.pairs.is_empty());
        assert_eq!((a.unmatched_pred.clone(), a.unmatched_gold.clone()), (vec![0], vec![0]));
        // touching intervals share no character
        let a = align_events(&[ev(SdohType::Drug, 10, 17)], &[ev(SdohType::Drug, 17, 20)]);
        assert!(a.pairs.is_empty());
    }

    #[test]
    fn status_value_mismatch_is_fp_and_fn() {
        let g = vec![ev(SdohType::Tobacco, 0, 5).with_status(sp(6, 10), "past")];
        let p = vec![ev(SdohType::Tobacco, 0, 5).with_status(sp(6, 10), "current")];
        assert_eq!(score_document(&p, &g).get(SdohType::Tobacco, ArgKind::Status), MatchCounts::new(0, 1, 1));
    }

    #[test]
    fn extra_history_is_fp() {
        let g = vec![ev(SdohType::Tobacco, 0, 5).with_status(sp(6, 10), "past")];
        let p = vec![g[0].clone().with_span(ArgKind::History, sp(11, 20))];
        assert_eq!(score_document(&p, &g).get(SdohType::Tobacco, ArgKind::History), MatchCounts::new(0, 1, 0));
    }

    #[test]
    fn optimal_beats_greedy() {
        // greedy takes the longest overlap (p0,g1) and strands g0
        let gold = vec![ev(SdohType::Drug, 0, 4), ev(SdohType::Drug, 3, 12)];
        let pred = vec![ev(SdohType::Drug, 2, 12), ev(SdohType::Drug, 10, 14)];
        let greedy = greedy_pairs(&pred, &gold, &[0, 1], &[0, 1]);
        assert_eq!(greedy, vec![(0, 1)]);
        let a = align_events(&pred, &gold);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a, align_events_exhaustive(&pred, &gold));
    }

    #[test]
    fn argument_tp_breaks_pairing_ties() {
        let g = vec![ev(SdohType::Drug, 0, 10).with_status(sp(20, 24), "past")];
        let p = vec![
            ev(SdohType::Drug, 0, 10).with_status(sp(20, 24), "current"),
            ev(SdohType::Drug, 5, 8).with_status(sp(20, 24), "past"),
        ];
        assert_eq!(align_events(&p, &g).pairs, vec![(1, 0)]);
    }

    #[test]
    fn swap_duality() {
        let g = prompt2_gold();
        let mut p = g.clone();
        p.pop();
        p[0].type_.as_mut().unwrap().value = Some("alone".into());
        let a = score_document(&p, &g);
        let b = score_document(&g, &p);
        assert_eq!(a.swapped(), b);
    }

    #[test]
    fn zero_denominators() {
        let r = aggregate(&[score_document(&[], &prompt2_gold())]);
        assert_eq!(r.micro.prf, Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
        let r = aggregate(&[score_document(&[], &[])]);
        assert!(r.per_type.is_empty() && r.cells.is_empty());
        assert_eq!(r.micro.prf.f1, 0.0);
    }

    #[test]
    fn hand_counted_prf() {
        let p = Prf::from_counts(MatchCounts::new(8, 2, 3));
        assert!((p.precision - 0.8).abs() < 1e-12);
        assert!((p.recall - 8.0 / 11.0).abs() < 1e-12);
        assert!((p.f1 - 2.0 * 0.8 * (8.0 / 11.0) / (0.8 + 8.0 / 11.0)).abs() < 1e-12);
    }

    #[test]
    fn aggregate_is_order_independent() {
        let g = prompt2_gold();
        let t1 = score_document(&g[..1], &g);
        let t2 = score_document(&g, &g[1..]);
        let a = aggregate(&[t1, t2]);
        let b = aggregate(&[t2, t1]);
        assert_eq!(a, b);
        assert!(a.render_table(true).contains("Overall (micro)"));
    }

    #[test]
    fn error_categories() {
        let gold = vec![
            ev(SdohType::Tobacco, 0, 5).with_status(sp(6, 10), "past"),
            ev(SdohType::Tobacco, 30, 35).with_status(sp(36, 40), "current").with_span(ArgKind::Amount, sp(41, 45)),
            ev(SdohType::Drug, 50, 55).with_status(sp(56, 60), "past").with_span(ArgKind::Method, sp(61, 63)),
        ];
        let pred = vec![
            ev(SdohType::Tobacco, 30, 35)
                .with_status(sp(36, 40), "past")
                .with_span(ArgKind::Frequency, Span::new(46, 51, "often")),
            ev(SdohType::Drug, 50, 55).with_status(sp(56, 60), "past"),
        ];
        let tags = error_report("n", &pred, &gold);
        let cats: Vec<_> = tags.iter().map(|t| (t.sdoh, t.kind, t.category)).collect();
        assert!(cats.contains(&(SdohType::Tobacco, ArgKind::Trigger, ErrorCategory::OneOfMany)));
        assert!(cats.contains(&(SdohType::Tobacco, ArgKind::Status, ErrorCategory::IncorrectValue)));
        assert!(cats.contains(&(SdohType::Tobacco, ArgKind::Amount, ErrorCategory::MissingValue)));
        assert!(cats.contains(&(SdohType::Tobacco, ArgKind::Frequency, ErrorCategory::NonSpecific)));
        assert!(cats.contains(&(SdohType::Drug, ArgKind::Method, ErrorCategory::MissingDrugMethodType)));
        let summary = summarize_errors(&tags);
        assert_eq!(summary.len(), ErrorCategory::ALL.len());
        // tags account for every FP and FN
        let t = score_document(&pred, &gold).total();
        assert_eq!(tags.iter().map(|t| t.fp as u64).sum::<u64>(), t.fp);
        assert_eq!(tags.iter().map(|t| t.fn_ as u64).sum::<u64>(), t.fn_);
    }
}
