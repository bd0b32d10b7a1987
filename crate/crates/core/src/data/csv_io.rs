//! CSV ingestion and export of client datasets.
//!
//! Each row is one time step: `client_id, label, <channel columns...>`.
//! Consecutive rows of a client form windows of `window_len` steps. A modality
//! whose cells are all empty within a window is absent for that sample and is
//! zero-imputed; a modality whose columns are missing from the header is
//! absent everywhere.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::generate::SpeedConfig;
use super::types::{ClientProfile, ModalityLayout, MultimodalSample};
use crate::error::{Result, SimError};
use crate::nn::DenseArray;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvModality {
    pub id: usize,
    pub channels: usize,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub window_len: usize,
    pub modalities: Vec<CsvModality>,
    pub label_column: String,
    pub client_column: String,
}

impl CsvSchema {
    /// Column names `m{id}_c{channel}` for every channel of `layout`.
    pub fn for_layout(layout: &ModalityLayout, window_len: usize) -> Self {
        Self {
            window_len,
            modalities: (0..layout.num_modalities())
                .map(|m| CsvModality {
                    id: m,
                    channels: layout.channels(m),
                    columns: (0..layout.channels(m)).map(|c| format!("m{m}_c{c}")).collect(),
                })
                .collect(),
            label_column: "label".into(),
            client_column: "client_id".into(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let schema: Self = serde_json::from_reader(std::fs::File::open(path)?)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 {
            return Err(SimError::config("schema.window_len", "must be >= 1"));
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if m.columns.len() != m.channels || m.channels == 0 {
                return Err(SimError::config(
                    format!("schema.modalities[{i}].columns"),
                    format!("expected {} column names, got {}", m.channels, m.columns.len()),
                ));
            }
        }
        self.layout().map(|_| ())
    }

    pub fn layout(&self) -> Result<ModalityLayout> {
        let mut mods: Vec<&CsvModality> = self.modalities.iter().collect();
        mods.sort_by_key(|m| m.id);
        for (i, m) in mods.iter().enumerate() {
            if m.id != i {
                return Err(SimError::config("schema.modalities", "modality ids must be 0..M without gaps"));
            }
        }
        ModalityLayout::new(mods.iter().map(|m| m.channels).collect())
    }

    fn sorted_modalities(&self) -> Vec<&CsvModality> {
        let mut mods: Vec<&CsvModality> = self.modalities.iter().collect();
        mods.sort_by_key(|m| m.id);
        mods
    }
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes clients' training samples in the schema's column order.
pub fn export_csv<W: Write>(writer: W, schema: &CsvSchema, clients: &[ClientProfile]) -> Result<()> {
    let layout = schema.layout()?;
    let mods = schema.sorted_modalities();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![schema.client_column.clone(), schema.label_column.clone()];
    for m in &mods {
        header.extend(m.columns.iter().cloned());
    }
    w.write_record(&header)?;
    for c in clients {
        for s in &c.dataset {
            if s.window_len() != schema.window_len {
                return Err(SimError::dim("export window", schema.window_len, s.window_len()));
            }
            let len = s.window_len();
            for t in 0..len {
                let mut rec = vec![c.client_id.to_string(), s.label.to_string()];
                for m in &mods {
                    for ch in layout.block(m.id) {
                        rec.push(if s.present_mask[m.id] {
                            fmt_f64(s.data.data()[ch * len + t])
                        } else {
                            String::new()
                        });
                    }
                }
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv_file(path: &Path, schema: &CsvSchema, clients: &[ClientProfile]) -> Result<()> {
    export_csv(std::fs::File::create(path)?, schema, clients)
}

struct ColumnMap {
    client: usize,
    label: usize,
    /// Per modality (sorted by id): column index of each channel, or `None` if absent from the header.
    modalities: Vec<Option<Vec<usize>>>,
}

fn map_columns(headers: &csv::StringRecord, schema: &CsvSchema) -> Result<ColumnMap> {
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing = |name: &str| SimError::Malformed {
        location: "header".into(),
        message: format!("missing required column `{name}`"),
    };
    let client = find(&schema.client_column).ok_or_else(|| missing(&schema.client_column))?;
    let label = find(&schema.label_column).ok_or_else(|| missing(&schema.label_column))?;
    let mut modalities = Vec::new();
    for m in schema.sorted_modalities() {
        let idx: Vec<Option<usize>> = m.columns.iter().map(|c| find(c)).collect();
        if idx.iter().all(Option::is_some) {
            modalities.push(Some(idx.into_iter().flatten().collect()));
        } else if idx.iter().all(Option::is_none) {
            modalities.push(None);
        } else {
            return Err(SimError::Malformed {
                location: "header".into(),
                message: format!("modality {} has only some of its columns", m.id),
            });
        }
    }
    Ok(ColumnMap {
        client,
        label,
        modalities,
    })
}

/// Reads client datasets; link speeds are drawn from `speeds` with `speed_seed`.
pub fn ingest_csv_reader<R: Read>(reader: R, schema: &CsvSchema, speeds: &SpeedConfig, speed_seed: u64) -> Result<Vec<ClientProfile>> {
    schema.validate()?;
    let layout = schema.layout()?;
    let len = schema.window_len;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let cols = map_columns(rdr.headers()?, schema)?;

    // Per client: (label, line, cells) rows in file order.
    type Row = (usize, u64, Vec<Option<f64>>);
    let mut rows: BTreeMap<usize, Vec<Row>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let loc = |col: &str| format!("line {line}, column `{col}`");
        let parse_int = |idx: usize, name: &str| -> Result<usize> {
            rec.get(idx).unwrap_or("").trim().parse::<usize>().map_err(|e| SimError::Malformed {
                location: loc(name),
                message: e.to_string(),
            })
        };
        let client = parse_int(cols.client, &schema.client_column)?;
        let label = parse_int(cols.label, &schema.label_column)?;
        let mut cells = Vec::with_capacity(layout.total_channels());
        for (m, spec) in cols.modalities.iter().zip(schema.sorted_modalities()) {
            match m {
                None => cells.extend(std::iter::repeat_n(None, spec.channels)),
                Some(idx) => {
                    for (&c, name) in idx.iter().zip(&spec.columns) {
                        let raw = rec.get(c).unwrap_or("").trim();
                        cells.push(if raw.is_empty() {
                            None
                        } else {
                            let v: f64 = raw.parse().map_err(|e: std::num::ParseFloatError| SimError::Malformed {
                                location: loc(name),
                                message: e.to_string(),
                            })?;
                            if !v.is_finite() {
                                return Err(SimError::Malformed {
                                    location: loc(name),
                                    message: "non-finite value".into(),
                                });
                            }
                            Some(v)
                        });
                    }
                }
            }
        }
        rows.entry(client).or_default().push((label, line, cells));
    }
    if rows.is_empty() {
        return Err(SimError::Empty("CSV contains no data rows".into()));
    }

    let m = layout.num_modalities();
    let mut clients = Vec::with_capacity(rows.len());
    for (client_id, client_rows) in rows {
        if client_rows.len() % len != 0 {
            return Err(SimError::Malformed {
                location: format!("client {client_id}"),
                message: format!("{} rows is not a multiple of window_len {len}", client_rows.len()),
            });
        }
        let mut dataset = Vec::with_capacity(client_rows.len() / len);
        for window in client_rows.chunks(len) {
            let (label, first_line, _) = &window[0];
            if let Some((_, line, _)) = window.iter().find(|(l, _, _)| l != label) {
                return Err(SimError::Malformed {
                    location: format!("line {line}"),
                    message: format!("label changes inside a window starting at line {first_line}"),
                });
            }
            let mut data = vec![0.0; layout.total_channels() * len];
            let mut present = vec![false; m];
            for (mi, p) in present.iter_mut().enumerate() {
                let block = layout.block(mi);
                let filled = window
                    .iter()
                    .flat_map(|(_, _, cells)| cells[block.clone()].iter())
                    .filter(|c| c.is_some())
                    .count();
                if filled == 0 {
                    continue;
                }
                if filled != block.len() * len {
                    return Err(SimError::Malformed {
                        location: format!("window starting at line {first_line}"),
                        message: format!("modality {mi} is only partially filled"),
                    });
                }
                *p = true;
                for (t, (_, _, cells)) in window.iter().enumerate() {
                    for ch in block.clone() {
                        data[ch * len + t] = cells[ch].expect("checked filled");
                    }
                }
            }
            dataset.push(MultimodalSample {
                data: DenseArray::new(vec![layout.total_channels(), len], data)?,
                label: *label,
                present_mask: present,
            });
        }
        let available: Vec<usize> = (0..m).filter(|&j| dataset.iter().any(|s| s.present_mask[j])).collect();
        if available.is_empty() {
            return Err(SimError::Malformed {
                location: format!("client {client_id}"),
                message: "no modality has data".into(),
            });
        }
        let (upload_bps, download_bps) = speeds.sample(speed_seed, client_id);
        clients.push(ClientProfile {
            client_id,
            dataset,
            available_modalities: available,
            upload_bps,
            download_bps,
        });
    }
    Ok(clients)
}

pub fn ingest_csv(path: &Path, schema: &CsvSchema, speeds: &SpeedConfig, speed_seed: u64) -> Result<Vec<ClientProfile>> {
    ingest_csv_reader(std::fs::File::open(path)?, schema, speeds, speed_seed)
}
