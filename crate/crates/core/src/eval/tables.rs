use super::extrinsic::{AccuracyRow, ExtrinsicReport};
use super::intrinsic::{round_half_up, Culture, IntrinsicReport};
use crate::fusion::Region;

#[derive(Clone, Copy, PartialEq)]
enum Align {
    Left,
    Right,
}

/// Fixed-width grid: columns separated by two spaces, a dashed rule under
/// the header, trailing spaces trimmed.
fn grid(header: &[String], rows: &[Vec<String>], align: &[Align]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .zip(align)
            .map(|((c, w), a)| match a {
                Align::Left => format!("{c:<w$}"),
                Align::Right => format!("{c:>w$}"),
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    let total = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

pub fn fmt2(x: f64) -> String {
    format!("{:.2}", round_half_up(x, 2))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), fmt2)
}

/// Display name for a model id.
pub fn model_label(id: &str) -> String {
    match id {
        "comet" => "COMET".into(),
        "gd-comet" => "GD-COMET".into(),
        "gd-bart" => "GD-BART".into(),
        "vl-bert" => "VL-BERT".into(),
        other => other.to_string(),
    }
}

/// Mean grade per criterion and average kappa, one block per model with
/// cultures in the order India, S Korea, Nigeria, Iran, Indonesia.
pub fn render_table1(report: &IntrinsicReport) -> String {
    let header: Vec<String> = ["Model", "Culture", "(1)", "(2)", "(3)", "Avg kappa"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (model, block) in &report.models {
        let mut first = true;
        for culture in Culture::ALL {
            let Some(row) = block.rows.get(&culture) else {
                continue;
            };
            let mut cells = vec![
                if first {
                    model_label(model)
                } else {
                    String::new()
                },
                culture.short_label().to_string(),
            ];
            cells.extend(row.means.iter().map(|m| fmt_opt(*m)));
            cells.push(fmt_opt(row.kappa));
            rows.push(cells);
            first = false;
        }
    }
    let align = [
        Align::Left,
        Align::Left,
        Align::Right,
        Align::Right,
        Align::Right,
        Align::Right,
    ];
    grid(&header, &rows, &align)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table2Column {
    pub label: String,
    pub row: AccuracyRow,
    /// Reference columns (human performance) are never marked as best.
    pub reference: bool,
}

/// Columns for every model of a report; labels listed in `reference` are
/// marked as reference columns.
pub fn table2_columns(report: &ExtrinsicReport, reference: &[&str]) -> Vec<Table2Column> {
    report
        .models
        .iter()
        .map(|m| Table2Column {
            label: model_label(&m.model),
            row: m.average.clone(),
            reference: reference.contains(&m.model.as_str()),
        })
        .collect()
}

/// Accuracy per region (rows GD-VCR, West, South Asia, Africa, East Asia)
/// by model (columns). The best non-reference value of each row is wrapped
/// in `**`.
pub fn render_table2(columns: &[Table2Column]) -> String {
    let mut header = vec!["Datasets".to_string()];
    header.extend(columns.iter().map(|c| c.label.clone()));
    let mut align = vec![Align::Left];
    align.extend(columns.iter().map(|_| Align::Right));
    let mut rows = Vec::new();
    if !columns.is_empty() {
        let keys = std::iter::once(None).chain(Region::TABLE_ORDER.into_iter().map(Some));
        for key in keys {
            let values: Vec<Option<f64>> = columns
                .iter()
                .map(|c| c.row.get(key).map(|v| round_half_up(v, 2)))
                .collect();
            let best = columns
                .iter()
                .zip(&values)
                .filter(|(c, _)| !c.reference)
                .filter_map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut cells = vec![key.map_or("GD-VCR", Region::label).to_string()];
            for (c, v) in columns.iter().zip(&values) {
                cells.push(match v {
                    Some(v) if !c.reference && *v == best => format!("**{}**", fmt2(*v)),
                    other => fmt_opt(*other),
                });
            }
            rows.push(cells);
        }
    }
    grid(&header, &rows, &align)
}

/// Per-seed accuracies followed by the seed average for every model.
pub fn render_seed_table(report: &ExtrinsicReport) -> String {
    let order = [
        None,
        Some(Region::West),
        Some(Region::SouthAsia),
        Some(Region::EastAsia),
        Some(Region::Africa),
    ];
    let mut header = vec!["Model".to_string()];
    header.extend(
        order
            .iter()
            .map(|r| r.map_or("Overall", Region::label).to_string()),
    );
    let mut align = vec![Align::Left];
    align.extend(order.iter().map(|_| Align::Right));
    let mut rows = Vec::new();
    for m in &report.models {
        let label = model_label(&m.model);
        let entries = m
            .seeds
            .iter()
            .map(|s| (format!("{label} (seed {})", s.seed), &s.accuracy))
            .chain(std::iter::once((format!("{label} (average)"), &m.average)));
        for (name, row) in entries {
            let mut cells = vec![name];
            cells.extend(order.iter().map(|r| fmt_opt(row.get(*r))));
            rows.push(cells);
        }
    }
    grid(&header, &rows, &align)
}
