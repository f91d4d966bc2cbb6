//! Long-format survey files.
//!
//! ```text
//! # states=free,barnacle,red alga
//! quadrat,site,x,y,t,replicate,state
//! Q1,1,0,0,1,1,2
//! Q1,1,0,0,2,1,
//! ```
//!
//! One row per survey record. `t` and `replicate` start at 1, `state` is a
//! 1-based code, and an empty or `NA` state marks a survey that did not
//! happen (the row still registers the site and period). Comment lines
//! start with `#`; two are directives:
//!
//! * `# states=a,b,c` names codes 1..S. Without it S is the largest code
//!   recorded (at least 2) and each code is its own label.
//! * `# site=<id>,<x>,<y>` declares a site. Once any site is declared, rows
//!   may only refer to declared sites, and declared sites with no rows are
//!   kept as fully unobserved.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use spocc_core::{ObservationSet, SiteFrame, StateSpace};

use crate::error::{CliError, Result};

pub const HEADER: [&str; 7] = ["quadrat", "site", "x", "y", "t", "replicate", "state"];

/// One quadrat's surveys with its coordinate frame and state labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub quadrat: String,
    /// File identifiers of the sites, in frame order (ascending).
    pub site_ids: Vec<u64>,
    pub frame: SiteFrame,
    pub states: StateSpace,
    pub observations: ObservationSet,
}

struct Row {
    line: u64,
    site: u64,
    position: [f64; 2],
    time: usize,
    replicate: usize,
    code: Option<usize>,
}

fn is_missing(s: &str) -> bool {
    s.is_empty() || s == "NA"
}

pub fn read_datasets(path: &Path) -> Result<Vec<Dataset>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_datasets(&text, path)
}

/// Parses every quadrat in a file, in order of first appearance.
pub fn parse_datasets(text: &str, path: &Path) -> Result<Vec<Dataset>> {
    let parse_err = |line: u64, message: String| CliError::Parse { path: path.to_path_buf(), line, message };

    let mut declared_states: Option<Vec<String>> = None;
    let mut site_table: BTreeMap<u64, [f64; 2]> = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k as u64 + 1;
        let Some(comment) = raw.trim_start().strip_prefix('#') else { continue };
        let comment = comment.trim();
        if let Some(labels) = comment.strip_prefix("states=") {
            if declared_states.is_some() {
                return Err(parse_err(line, "states declared twice".into()));
            }
            declared_states = Some(labels.split(',').map(|l| l.trim().to_string()).collect());
        } else if let Some(site) = comment.strip_prefix("site=") {
            let fields: Vec<&str> = site.split(',').map(str::trim).collect();
            let [id, x, y] = fields[..] else {
                return Err(parse_err(line, format!("site declaration needs id,x,y, got {site:?}")));
            };
            let id = parse_id(id).map_err(|m| parse_err(line, m))?;
            let pos =
                [parse_coord(x).map_err(|m| parse_err(line, m))?, parse_coord(y).map_err(|m| parse_err(line, m))?];
            if site_table.insert(id, pos).is_some() {
                return Err(parse_err(line, format!("site {id} declared twice")));
            }
        }
    }

    let mut reader =
        csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).flexible(false).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let header_line = reader.position().line();
    let column = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| parse_err(header_line, format!("missing column {name:?}")))
    };
    let idx: Vec<usize> = HEADER.iter().map(|h| column(h)).collect::<Result<_>>()?;

    let mut quadrats: Vec<(String, Vec<Row>)> = Vec::new();
    let mut quadrat_index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<(usize, u64, usize, usize)> = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |k: usize| record.get(idx[k]).unwrap_or("");
        let quadrat = field(0).to_string();
        let site = parse_id(field(1)).map_err(|m| parse_err(line, m))?;
        let position = [
            parse_coord(field(2)).map_err(|m| parse_err(line, m))?,
            parse_coord(field(3)).map_err(|m| parse_err(line, m))?,
        ];
        let time = parse_index(field(4), "t").map_err(|m| parse_err(line, m))?;
        let replicate = parse_index(field(5), "replicate").map_err(|m| parse_err(line, m))?;
        let code = if is_missing(field(6)) {
            None
        } else {
            Some(parse_index(field(6), "state").map_err(|m| parse_err(line, m))?)
        };
        if !site_table.is_empty() {
            match site_table.get(&site) {
                None => return Err(CliError::UnknownSite { path: path.to_path_buf(), line, site: site.to_string() }),
                Some(p) if *p != position => {
                    return Err(parse_err(line, format!("site {site} coordinates differ from its declaration")))
                }
                Some(_) => {}
            }
        }
        let q = *quadrat_index.entry(quadrat.clone()).or_insert_with(|| {
            quadrats.push((quadrat.clone(), Vec::new()));
            quadrats.len() - 1
        });
        if !seen.insert((q, site, time, replicate)) {
            return Err(CliError::DuplicateRecord {
                path: path.to_path_buf(),
                line,
                site: site.to_string(),
                time,
                replicate,
            });
        }
        quadrats[q].1.push(Row { line, site, position, time, replicate, code });
    }
    if quadrats.is_empty() {
        return Err(parse_err(header_line, "no data rows".into()));
    }

    // code -> dense 0-based state
    let (labels, relabel): (Vec<String>, BTreeMap<usize, usize>) = match declared_states {
        Some(labels) => {
            let s = labels.len();
            for row in quadrats.iter().flat_map(|q| &q.1) {
                if let Some(c) = row.code.filter(|&c| c > s) {
                    return Err(parse_err(row.line, format!("state {c} outside the {s} declared states")));
                }
            }
            (labels, (1..=s).map(|c| (c, c - 1)).collect())
        }
        None => {
            let codes: BTreeSet<usize> = quadrats.iter().flat_map(|q| &q.1).filter_map(|r| r.code).collect();
            let s = codes.last().copied().unwrap_or(0).max(2);
            let unused: Vec<String> = (1..=s).filter(|c| !codes.contains(c)).map(|c| c.to_string()).collect();
            if !unused.is_empty() {
                log::warn!("{}: state code(s) {} never recorded", path.display(), unused.join(", "));
            }
            ((1..=s).map(|c| c.to_string()).collect(), (1..=s).map(|c| (c, c - 1)).collect())
        }
    };
    let states = StateSpace::new(labels)?;

    quadrats.into_iter().map(|(quadrat, rows)| build(path, quadrat, rows, &site_table, &states, &relabel)).collect()
}

fn build(
    path: &Path,
    quadrat: String,
    rows: Vec<Row>,
    site_table: &BTreeMap<u64, [f64; 2]>,
    states: &StateSpace,
    relabel: &BTreeMap<usize, usize>,
) -> Result<Dataset> {
    let mut positions: BTreeMap<u64, [f64; 2]> = site_table.clone();
    for row in &rows {
        match positions.get(&row.site) {
            Some(p) if *p != row.position => {
                return Err(CliError::Parse {
                    path: path.to_path_buf(),
                    line: row.line,
                    message: format!("site {} has inconsistent coordinates", row.site),
                })
            }
            Some(_) => {}
            None => {
                positions.insert(row.site, row.position);
            }
        }
    }
    let site_ids: Vec<u64> = positions.keys().copied().collect();
    let site_index: HashMap<u64, usize> = site_ids.iter().enumerate().map(|(k, &id)| (id, k)).collect();
    let horizon = rows.iter().map(|r| r.time).max().unwrap_or(0);
    let mut cells: Vec<Vec<Vec<(usize, usize)>>> = vec![vec![Vec::new(); horizon]; site_ids.len()];
    for row in &rows {
        if let Some(code) = row.code {
            cells[site_index[&row.site]][row.time - 1].push((row.replicate, relabel[&code]));
        }
    }
    let y: Vec<Vec<Vec<usize>>> = cells
        .into_iter()
        .map(|site| {
            site.into_iter()
                .map(|mut cell| {
                    cell.sort_unstable();
                    cell.into_iter().map(|(_, s)| s).collect()
                })
                .collect()
        })
        .collect();
    let frame = SiteFrame::new(positions.into_values().collect())?;
    let observations = ObservationSet::from_nested(&y, states.len())?;
    Ok(Dataset { quadrat, site_ids, frame, states: states.clone(), observations })
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, |p| p.line());
    CliError::Parse { path: path.to_path_buf(), line, message: e.to_string() }
}

fn parse_id(s: &str) -> std::result::Result<u64, String> {
    s.parse().map_err(|_| format!("site id {s:?} is not a non-negative integer"))
}

fn parse_coord(s: &str) -> std::result::Result<f64, String> {
    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("coordinate {s:?} is not a finite number"))
}

fn parse_index(s: &str, what: &str) -> std::result::Result<usize, String> {
    s.parse::<usize>().ok().filter(|&v| v >= 1).ok_or_else(|| format!("{what} {s:?} is not an integer >= 1"))
}

/// Writes datasets in canonical form: the states directive, the header,
/// then rows ordered by quadrat, site, period and replicate. Unsurveyed
/// periods get one row with an empty state so the file keeps every site
/// and the full horizon.
pub fn write_datasets<W: Write>(out: W, datasets: &[Dataset]) -> Result<()> {
    let mut out = out;
    let states = datasets.first().map(|d| d.states.labels().join(",")).unwrap_or_default();
    writeln!(out, "# states={states}").map_err(|e| CliError::io("<output>", e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(HEADER).map_err(csv_write_err)?;
    for d in datasets {
        let obs = &d.observations;
        for (i, id) in d.site_ids.iter().enumerate() {
            let [x, y] = d.frame.position(i);
            let (id, x, y) = (id.to_string(), x.to_string(), y.to_string());
            for t in 0..obs.horizon() {
                let tt = (t + 1).to_string();
                let reps = obs.replicates(i, t);
                if reps.is_empty() {
                    w.write_record([d.quadrat.as_str(), &id, &x, &y, &tt, "1", ""]).map_err(csv_write_err)?;
                }
                for (n, &s) in reps.iter().enumerate() {
                    let (n, s) = ((n + 1).to_string(), (s + 1).to_string());
                    w.write_record([d.quadrat.as_str(), &id, &x, &y, &tt, &n, &s]).map_err(csv_write_err)?;
                }
            }
        }
    }
    w.flush().map_err(|e| CliError::io("<output>", e))?;
    Ok(())
}

fn csv_write_err(e: csv::Error) -> CliError {
    CliError::Invalid(format!("writing CSV: {e}"))
}

pub fn write_dataset_file(path: &Path, datasets: &[Dataset]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    write_datasets(std::io::BufWriter::new(file), datasets)
}

/// Picks one quadrat: the named one, or the only one in the file.
pub fn select_quadrat(datasets: Vec<Dataset>, name: Option<&str>, path: &Path) -> Result<Dataset> {
    let available = || datasets.iter().map(|d| d.quadrat.clone()).collect::<Vec<_>>().join(", ");
    match name {
        Some(q) => {
            let names = available();
            datasets.into_iter().find(|d| d.quadrat == q).ok_or_else(|| CliError::Config {
                path: PathBuf::from(path),
                message: format!("no quadrat {q:?} (have {names})"),
            })
        }
        None if datasets.len() == 1 => Ok(datasets.into_iter().next().expect("one dataset")),
        None => Err(CliError::Config {
            path: PathBuf::from(path),
            message: format!("file holds several quadrats ({}); pick one with --quadrat", available()),
        }),
    }
}

/// Merges every state recorded fewer than `threshold` times into a single
/// state placed last and labelled with the merged labels joined by `+`.
/// Returns the dataset unchanged when no state is rare.
pub fn merge_rare(dataset: &Dataset, threshold: usize) -> Result<Dataset> {
    let s = dataset.states.len();
    let mut counts = vec![0usize; s];
    for &state in dataset.observations.states() {
        counts[state] += 1;
    }
    let rare: Vec<usize> = (0..s).filter(|&k| counts[k] < threshold).collect();
    if rare.is_empty() {
        return Ok(dataset.clone());
    }
    let kept: Vec<usize> = (0..s).filter(|k| !rare.contains(k)).collect();
    if kept.is_empty() {
        return Err(CliError::Invalid(format!("every state occurs fewer than {threshold} times")));
    }
    let mut map = vec![kept.len(); s];
    for (new, &old) in kept.iter().enumerate() {
        map[old] = new;
    }
    let mut labels: Vec<String> = kept.iter().map(|&k| dataset.states.label(k).to_string()).collect();
    labels.push(rare.iter().map(|&k| dataset.states.label(k)).collect::<Vec<_>>().join("+"));
    let y: Vec<Vec<Vec<usize>>> = dataset
        .observations
        .to_nested()
        .into_iter()
        .map(|site| site.into_iter().map(|cell| cell.into_iter().map(|v| map[v]).collect()).collect())
        .collect();
    let states = StateSpace::new(labels)?;
    let observations = ObservationSet::from_nested(&y, states.len())?;
    log::info!("merged {} rare state(s) into {:?}", rare.len(), states.label(states.len() - 1));
    Ok(Dataset { observations, states, ..dataset.clone() })
}
