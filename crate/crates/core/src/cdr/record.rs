//! Text CDR parsing.
//!
//! A CDR export is a header row followed by one record per line. Every field
//! is wrapped in quotes. Besides ASCII `"`, a few typographic quote
//! characters are accepted as delimiters because decoded exports in the wild
//! carry them (`ō`, `ö`, `“`, `”`). A non-ASCII quote only closes a field when
//! it is followed by optional blanks and then a comma or end of line, so the
//! same characters can still appear inside field text. Output is always
//! written with ASCII quotes.

use std::sync::Arc;

use chrono::{NaiveDate, NaiveTime};
use thiserror::Error;

/// Number of fields in every header and record.
pub const CDR_FIELD_COUNT: usize = 30;

pub const COL_CALL_TYPE: &str = "Call Type";
pub const COL_CALL_CAUSE: &str = "Call Cause";
pub const COL_CUSTOMER: &str = "Customer Identifier";
pub const COL_DIALLED: &str = "Telephone Number Dialled";
pub const COL_CALL_DATE: &str = "Call Date";
pub const COL_CALL_TIME: &str = "Call Time";
pub const COL_DURATION: &str = "Duration";

const MANDATORY: [&str; 7] = [
    COL_CALL_TYPE,
    COL_CALL_CAUSE,
    COL_CUSTOMER,
    COL_DIALLED,
    COL_CALL_DATE,
    COL_CALL_TIME,
    COL_DURATION,
];

pub(crate) const DATE_FORMAT: &str = "%d/%m/%Y";
pub(crate) const TIME_FORMAT: &str = "%H:%M:%S";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CdrError {
    #[error("first line is not a valid {CDR_FIELD_COUNT}-field CDR header")]
    HeaderMissing,
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCountMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: malformed quoting")]
    BadQuoting { line: usize },
    #[error("line {line}: unparseable call date {value:?}")]
    BadDate { line: usize, value: String },
    #[error("line {line}: unparseable call time {value:?}")]
    BadTime { line: usize, value: String },
    #[error("line {line}: unparseable duration {value:?}")]
    BadDuration { line: usize, value: String },
}

/// Column names in declared order, with the positions of the typed fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdrHeader {
    names: Vec<String>,
    idx_call_type: usize,
    idx_call_cause: usize,
    idx_customer: usize,
    idx_dialled: usize,
    idx_date: usize,
    idx_time: usize,
    idx_duration: usize,
}

impl CdrHeader {
    pub fn from_names(names: Vec<String>) -> Result<Self, CdrError> {
        if names.len() != CDR_FIELD_COUNT || names.iter().any(|n| n.trim().is_empty()) {
            return Err(CdrError::HeaderMissing);
        }
        let find = |col: &str| names.iter().position(|n| n == col);
        let mut idx = [0usize; 7];
        for (slot, col) in idx.iter_mut().zip(MANDATORY) {
            *slot = find(col).ok_or(CdrError::HeaderMissing)?;
        }
        Ok(Self {
            idx_call_type: idx[0],
            idx_call_cause: idx[1],
            idx_customer: idx[2],
            idx_dialled: idx[3],
            idx_date: idx[4],
            idx_time: idx[5],
            idx_duration: idx[6],
            names,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// One parsed call detail record. All 30 fields are kept verbatim in header
/// order; the mandatory timing fields are also available parsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdrRecord {
    header: Arc<CdrHeader>,
    /// 1-based line number in the source text.
    pub line: usize,
    fields: Vec<String>,
    pub call_date: Option<NaiveDate>,
    pub call_time: Option<NaiveTime>,
    pub duration: Option<u32>,
}

impl CdrRecord {
    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn header(&self) -> &CdrHeader {
        &self.header
    }

    /// Field value by column name.
    pub fn get(&self, column: &str) -> Option<&str> {
        self.header.position(column).map(|i| self.fields[i].as_str())
    }

    pub fn call_type(&self) -> &str {
        &self.fields[self.header.idx_call_type]
    }

    pub fn call_cause(&self) -> &str {
        &self.fields[self.header.idx_call_cause]
    }

    pub fn customer_identifier(&self) -> &str {
        &self.fields[self.header.idx_customer]
    }

    pub fn telephone_number_dialled(&self) -> &str {
        &self.fields[self.header.idx_dialled]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdrFile {
    pub header: Arc<CdrHeader>,
    pub records: Vec<CdrRecord>,
}

fn is_open_quote(c: char) -> bool {
    matches!(c, '"' | 'ō' | 'ö' | '“' | '”')
}

/// Splits one line into raw field strings. `None` on malformed quoting.
fn split_fields(line: &str) -> Option<Vec<String>> {
    let chars: Vec<char> = line.chars().collect();
    let mut fields = Vec::new();
    let mut i = 0;
    let skip_blanks = |i: &mut usize| {
        while *i < chars.len() && (chars[*i] == ' ' || chars[*i] == '\t') {
            *i += 1;
        }
    };
    loop {
        skip_blanks(&mut i);
        let mut value = String::new();
        if i < chars.len() && is_open_quote(chars[i]) {
            let ascii = chars[i] == '"';
            i += 1;
            loop {
                let c = *chars.get(i)?;
                if ascii && c == '"' {
                    if chars.get(i + 1) == Some(&'"') {
                        value.push('"');
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                if !ascii && is_open_quote(c) {
                    let mut j = i + 1;
                    while j < chars.len() && (chars[j] == ' ' || chars[j] == '\t') {
                        j += 1;
                    }
                    if j == chars.len() || chars[j] == ',' {
                        i += 1;
                        break;
                    }
                }
                value.push(c);
                i += 1;
            }
            skip_blanks(&mut i);
        } else {
            // Unquoted field: everything up to the next comma.
            let start = i;
            while i < chars.len() && chars[i] != ',' {
                i += 1;
            }
            value = chars[start..i].iter().collect::<String>().trim().to_owned();
        }
        fields.push(value);
        match chars.get(i) {
            None => return Some(fields),
            Some(',') => i += 1,
            Some(_) => return None,
        }
    }
}

fn parse_record(header: &Arc<CdrHeader>, line_no: usize, line: &str) -> Result<CdrRecord, CdrError> {
    let fields = split_fields(line).ok_or(CdrError::BadQuoting { line: line_no })?;
    if fields.len() != CDR_FIELD_COUNT {
        return Err(CdrError::FieldCountMismatch {
            line: line_no,
            expected: CDR_FIELD_COUNT,
            found: fields.len(),
        });
    }
    let date_raw = fields[header.idx_date].trim();
    let call_date = if date_raw.is_empty() {
        None
    } else {
        Some(NaiveDate::parse_from_str(date_raw, DATE_FORMAT).map_err(|_| CdrError::BadDate {
            line: line_no,
            value: date_raw.to_owned(),
        })?)
    };
    let time_raw = fields[header.idx_time].trim();
    let call_time = if time_raw.is_empty() {
        None
    } else {
        Some(NaiveTime::parse_from_str(time_raw, TIME_FORMAT).map_err(|_| CdrError::BadTime {
            line: line_no,
            value: time_raw.to_owned(),
        })?)
    };
    let dur_raw = fields[header.idx_duration].trim();
    let duration = if dur_raw.is_empty() {
        None
    } else {
        Some(dur_raw.parse::<u32>().map_err(|_| CdrError::BadDuration {
            line: line_no,
            value: dur_raw.to_owned(),
        })?)
    };
    Ok(CdrRecord {
        header: Arc::clone(header),
        line: line_no,
        fields,
        call_date,
        call_time,
        duration,
    })
}

/// Parses a CDR text export: header line, then one record per non-empty line.
pub fn parse_cdr(text: &str) -> Result<CdrFile, CdrError> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or(CdrError::HeaderMissing)?;
    let first = first.trim_start_matches('\u{feff}');
    let names = split_fields(first).ok_or(CdrError::HeaderMissing)?;
    let header = Arc::new(CdrHeader::from_names(names)?);
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(&header, idx + 1, line)?);
    }
    Ok(CdrFile { header, records })
}

fn quote(out: &mut String, value: &str) {
    out.push('"');
    for c in value.chars() {
        if c == '"' {
            out.push('"');
        }
        out.push(c);
    }
    out.push('"');
}

fn write_line(out: &mut String, fields: &[String]) {
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        quote(out, f);
    }
    out.push('\n');
}

/// Serializes header and records back to CDR text with ASCII quotes.
pub fn write_cdr(header: &CdrHeader, records: &[CdrRecord]) -> String {
    let mut out = String::new();
    write_line(&mut out, header.names());
    for r in records {
        write_line(&mut out, r.fields());
    }
    out
}
