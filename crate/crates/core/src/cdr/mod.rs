//! CDR ingestion: the 30-field text format, location observations, and the
//! slot-indexed transitions the rest of the pipeline runs on.

mod observation;
mod record;

pub use observation::{
    check_sorted, observations_to_transitions, parse_observation_log, records_to_observations,
    sort_observations, write_observation_log, FieldMapping, IngestError, IngestWarning,
    LocationObservation, ObservationBatch, ObservationKind, Transition,
};
pub use record::{
    parse_cdr, write_cdr, CdrError, CdrFile, CdrHeader, CdrRecord, CDR_FIELD_COUNT, COL_CALL_CAUSE,
    COL_CALL_DATE, COL_CALL_TIME, COL_CALL_TYPE, COL_CUSTOMER, COL_DIALLED, COL_DURATION,
};
