use hybridchoice::dataset::{read_csv, Dataset, Schema, VarKind};

use crate::error::{CliError, CliResult};

/// Header and rows of a CSV held in memory.
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn raw_table(bytes: &[u8]) -> CliResult<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| CliError::Input(format!("cannot read CSV header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Input(format!("malformed CSV: {e}")))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok(RawTable { header, rows })
}

/// Column kinds guessed from the cells. Named indicators are Likert when
/// every present cell is an integer in 1..=5 and continuous otherwise; other
/// fully numeric columns are continuous, anything else categorical text.
pub fn infer_schema(
    table: &RawTable,
    id_column: &str,
    hashed: bool,
    indicators: &[String],
) -> CliResult<Schema> {
    if !table.header.iter().any(|h| h == id_column) {
        return Err(hybridchoice::Error::MissingColumn {
            column: id_column.into(),
        }
        .into());
    }
    let mut schema = Schema::new(id_column);
    if hashed {
        schema = schema.hashed();
    }
    for (c, name) in table.header.iter().enumerate() {
        if name == id_column {
            continue;
        }
        if name == "choice" {
            schema = schema.with_choice("choice");
            continue;
        }
        if name == "weight" {
            schema = schema.with_weight("weight");
            continue;
        }
        let kind = if indicators.iter().any(|i| i == name) {
            let likert = table.rows.iter().all(|r| {
                r.get(c).is_none_or(|v| {
                    v.is_empty()
                        || v.parse::<f64>()
                            .is_ok_and(|x| x.fract() == 0.0 && (1.0..=5.0).contains(&x))
                })
            });
            if likert {
                VarKind::Likert
            } else {
                VarKind::Continuous
            }
        } else {
            let numeric = table.rows.iter().all(|r| {
                r.get(c)
                    .is_some_and(|v| v.parse::<f64>().is_ok_and(f64::is_finite))
            });
            if numeric {
                VarKind::Continuous
            } else {
                VarKind::Categorical
            }
        };
        schema = schema.with_variable(name.clone(), kind);
    }
    Ok(schema)
}

pub fn load(bytes: &[u8], schema: &Schema) -> CliResult<Dataset> {
    Ok(read_csv(bytes, schema)?)
}
