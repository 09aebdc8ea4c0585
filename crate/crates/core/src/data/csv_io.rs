use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::fam::Fam;
use super::features::{FeatureSchema, DEFAULT_SCHEMA_ID};
use crate::error::{Error, Result};

/// Schema id for CSV inputs whose columns are not the built-in flow schema.
pub const NATIVE_SCHEMA_ID: &str = "csv-native";

/// Columns that identify or label a flow rather than describe it; never used
/// as features unless listed explicitly.
const NON_FEATURE_COLUMNS: &[&str] = &[
    "label",
    "class",
    "flow id",
    "src ip",
    "source ip",
    "dst ip",
    "destination ip",
    "src port",
    "source port",
    "dst port",
    "destination port",
    "protocol",
    "timestamp",
];

#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    /// Column holding class names; `None` produces an unlabeled matrix.
    pub label_column: Option<String>,
    /// Feature columns in order. Default: every column except the label and
    /// flow identifiers.
    pub feature_columns: Option<Vec<String>>,
    /// Header renames applied before any lookup (`source name -> name`).
    pub name_map: HashMap<String, String>,
    /// Fixed class order. Unknown labels are then an error; otherwise classes
    /// are numbered in first-appearance order.
    pub class_names: Option<Vec<String>>,
    /// Overrides the schema id recorded in the file or inferred from columns.
    pub schema_id: Option<String>,
}

impl CsvOptions {
    pub fn labeled(label_column: impl Into<String>) -> Self {
        Self {
            label_column: Some(label_column.into()),
            ..Self::default()
        }
    }

    /// Parse a name-mapping file of `source,target` lines.
    pub fn load_name_map(path: &Path) -> Result<HashMap<String, String>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut map = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (from, to) = line.split_once(',').ok_or_else(|| {
                Error::Data(format!(
                    "{}:{}: expected `source,target`",
                    path.display(),
                    i + 1
                ))
            })?;
            map.insert(from.trim().to_string(), to.trim().to_string());
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub rows_kept: usize,
    /// Rows with a missing, blank or non-numeric cell, or a wrong field count.
    pub rows_dropped: usize,
}

/// Read a flow CSV into a [`Fam`].
///
/// Lines starting with `#` are comments. A `# schema: <id>` comment sets the
/// schema id and `# classes: a|b|c` fixes the class order, which is how
/// [`write_fam_csv`] output round-trips.
pub fn load_csv(path: &Path, options: &CsvOptions) -> Result<(Fam, LoadReport)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, options).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_csv(text: &str, options: &CsvOptions) -> Result<(Fam, LoadReport)> {
    let mut file_schema = None;
    let mut file_classes = None;
    for line in text
        .lines()
        .map(str::trim)
        .take_while(|l| l.starts_with('#') || l.is_empty())
    {
        let body = line.trim_start_matches('#').trim();
        if let Some(id) = body.strip_prefix("schema:") {
            file_schema = Some(id.trim().to_string());
        } else if let Some(names) = body.strip_prefix("classes:") {
            let names = names.trim();
            file_classes = Some(if names.is_empty() {
                Vec::new()
            } else {
                names.split('|').map(str::to_string).collect()
            });
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| {
            let h = h.trim();
            options
                .name_map
                .get(h)
                .cloned()
                .unwrap_or_else(|| h.to_string())
        })
        .collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(Error::Data("missing header row".into()));
    }
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("header lacks column {name:?}")))
    };

    let label_idx = options.label_column.as_deref().map(find).transpose()?;
    let feature_names: Vec<String> = match &options.feature_columns {
        Some(cols) => cols.clone(),
        None => header
            .iter()
            .enumerate()
            .filter(|&(i, h)| {
                Some(i) != label_idx
                    && !NON_FEATURE_COLUMNS.contains(&h.to_ascii_lowercase().as_str())
            })
            .map(|(_, h)| h.clone())
            .collect(),
    };
    if feature_names.is_empty() {
        return Err(Error::Data("no feature columns".into()));
    }
    let feature_idx = feature_names
        .iter()
        .map(|n| find(n))
        .collect::<Result<Vec<_>>>()?;

    let fixed_classes = options.class_names.clone().or(file_classes);
    let mut class_names = fixed_classes.clone().unwrap_or_default();
    let mut class_lookup: HashMap<String, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), i))
        .collect();

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0;
    for record in reader.records() {
        let record = record?;
        let parsed: Option<Vec<f64>> = feature_idx
            .iter()
            .map(|&i| {
                record
                    .get(i)
                    .and_then(|c| c.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            })
            .collect();
        let label = match label_idx {
            Some(i) => match record.get(i).map(str::trim) {
                Some(l) if !l.is_empty() => Some(l),
                _ => {
                    dropped += 1;
                    continue;
                }
            },
            None => None,
        };
        let Some(values) = parsed.filter(|_| record.len() == header.len()) else {
            dropped += 1;
            continue;
        };
        if let Some(label) = label {
            let class = match class_lookup.get(label) {
                Some(&c) => c,
                None if fixed_classes.is_some() => {
                    return Err(Error::Data(format!(
                        "label {label:?} is not a declared class"
                    )));
                }
                None => {
                    class_names.push(label.to_string());
                    class_lookup.insert(label.to_string(), class_names.len() - 1);
                    class_names.len() - 1
                }
            };
            labels.push(class);
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("no usable rows ({dropped} dropped)")));
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with missing or non-numeric cells");
    }

    let schema_id = options
        .schema_id
        .clone()
        .or(file_schema)
        .unwrap_or_else(|| {
            if feature_names == FeatureSchema::default_flow().columns {
                DEFAULT_SCHEMA_ID.to_string()
            } else {
                NATIVE_SCHEMA_ID.to_string()
            }
        });
    let report = LoadReport {
        rows_kept: rows.len(),
        rows_dropped: dropped,
    };
    let labels = label_idx.map(|_| labels);
    Ok((
        Fam::new(schema_id, feature_names, rows, labels, class_names)?,
        report,
    ))
}

/// Serialize a [`Fam`] in the dialect [`load_csv`] reads. Labeled matrices
/// get a trailing `label` column holding class names. Each line of `comment`
/// is emitted as a leading `# ` line.
pub fn fam_to_csv(fam: &Fam, comment: Option<&str>) -> String {
    let mut out = String::new();
    for line in comment.into_iter().flat_map(str::lines) {
        writeln!(out, "# {line}").unwrap();
    }
    writeln!(out, "# schema: {}", fam.schema_id()).unwrap();
    if fam.is_labeled() {
        writeln!(out, "# classes: {}", fam.class_names().join("|")).unwrap();
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = fam.feature_names().iter().map(String::as_str).collect();
    if fam.is_labeled() {
        header.push("label");
    }
    w.write_record(&header).unwrap();
    let labels = fam.labels();
    for (i, row) in fam.rows().iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        if let Some(labels) = labels {
            rec.push(fam.class_names()[labels[i]].clone());
        }
        w.write_record(&rec).unwrap();
    }
    out.push_str(&String::from_utf8(w.into_inner().unwrap()).unwrap());
    out
}

pub fn write_fam_csv(fam: &Fam, path: &Path, comment: Option<&str>) -> Result<()> {
    std::fs::write(path, fam_to_csv(fam, comment)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIX_CLASS: &str = "\
Flow ID, Src IP,Flow Duration,Total Fwd Packets,Label
1,10.0.0.1,5.0,3,Bilibili
2,10.0.0.2,1.5,7,QQ music
3,10.0.0.3,2.0,1,Honor of Kings
4,10.0.0.4,9.0,4,Teamfight Tactics
5,10.0.0.5,0.5,2,Game for peace
6,10.0.0.6,3.5,9,Background
7,10.0.0.7,4.0,2,Bilibili
";

    #[test]
    fn six_class_file_keeps_first_appearance_order() {
        let (fam, report) = parse_csv(SIX_CLASS, &CsvOptions::labeled("Label")).unwrap();
        assert_eq!(fam.num_classes(), 6);
        assert_eq!(
            fam.class_names(),
            [
                "Bilibili",
                "QQ music",
                "Honor of Kings",
                "Teamfight Tactics",
                "Game for peace",
                "Background"
            ]
        );
        assert_eq!(fam.feature_names(), ["Flow Duration", "Total Fwd Packets"]);
        assert_eq!(fam.labels().unwrap(), [0, 1, 2, 3, 4, 5, 0]);
        assert_eq!(
            report,
            LoadReport {
                rows_kept: 7,
                rows_dropped: 0
            }
        );
        assert_eq!(fam.schema_id(), NATIVE_SCHEMA_ID);
    }

    #[test]
    fn omitted_label_column_gives_unlabeled_matrix() {
        let (fam, _) = parse_csv(SIX_CLASS, &CsvOptions::default()).unwrap();
        assert!(fam.labels().is_none());
        assert_eq!(fam.len(), 7);
        let opts = CsvOptions {
            feature_columns: Some(vec!["Flow Duration".into(), "Total Fwd Packets".into()]),
            ..CsvOptions::default()
        };
        let (fam, report) = parse_csv(SIX_CLASS, &opts).unwrap();
        assert!(fam.labels().is_none());
        assert_eq!(report.rows_kept, 7);
    }

    #[test]
    fn blank_and_non_numeric_rows_are_dropped_and_counted() {
        let text = "a,b,label\n1,2,x\n,,\n3,4,y\n";
        let (fam, report) = parse_csv(text, &CsvOptions::labeled("label")).unwrap();
        assert_eq!(fam.len(), 2);
        assert_eq!(report.rows_dropped, 1);

        let text = "a,b,label\n1,2,x\n1,oops,y\n3,Infinity,y\n3,4\n";
        let (_, report) = parse_csv(text, &CsvOptions::labeled("label")).unwrap();
        assert_eq!(
            report,
            LoadReport {
                rows_kept: 1,
                rows_dropped: 3
            }
        );
    }

    #[test]
    fn header_errors() {
        assert!(parse_csv("a,b\n1,2\n", &CsvOptions::labeled("label")).is_err());
        let opts = CsvOptions {
            feature_columns: Some(vec!["zzz".into()]),
            ..CsvOptions::default()
        };
        assert!(parse_csv("a,b\n1,2\n", &opts).is_err());
        assert!(parse_csv("a,b\nx,y\n", &CsvOptions::default()).is_err());
    }

    #[test]
    fn name_map_renames_headers() {
        let mut opts = CsvOptions::labeled("label");
        opts.name_map
            .insert("Flow Duration".into(), "flow_duration".into());
        opts.name_map.insert("Label".into(), "label".into());
        let (fam, _) = parse_csv(SIX_CLASS, &opts).unwrap();
        assert_eq!(fam.feature_names()[0], "flow_duration");
    }

    #[test]
    fn written_matrix_round_trips_bit_exactly() {
        let fam = Fam::new(
            "custom",
            vec!["x".into(), "y".into()],
            vec![vec![0.1, 1.0 / 3.0], vec![-2.5e-300, 7.0]],
            Some(vec![1, 1]),
            vec!["never seen".into(), "b".into()],
        )
        .unwrap();
        let text = fam_to_csv(&fam, Some("generated\nseed=3"));
        assert!(text.starts_with("# generated\n# seed=3\n"));
        let (back, _) = parse_csv(&text, &CsvOptions::labeled("label")).unwrap();
        assert_eq!(back, fam);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err =
            load_csv(Path::new("/nonexistent/flows.csv"), &CsvOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
