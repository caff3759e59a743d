//! Ground-truth labels from the SNMPv3 replies in scan output.

use std::io::{Read, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::{parse_engine_id, vendor_from_engine_id, EngineId, SnmpError, VendorDictionary};
use crate::probe::ResponseSet;

/// One row of a labels file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub target: Ipv4Addr,
    pub engine_id: EngineId,
    pub enterprise_number: Option<u32>,
    pub vendor: String,
}

/// `None` when the target sent no SNMPv3 report; an error when the report
/// does not parse or carries an invalid engine ID.
pub fn label_response_set(
    set: &ResponseSet,
    dict: &VendorDictionary,
) -> Option<Result<LabelRecord, SnmpError>> {
    let report = set.snmp_record()?.snmp_report.as_ref()?;
    let bytes = match hex::decode(report) {
        Ok(b) => b,
        Err(e) => {
            return Some(Err(SnmpError::Ber {
                offset: 0,
                reason: format!("report is not hex: {e}"),
            }))
        }
    };
    Some(parse_engine_id(&bytes).map(|engine_id| LabelRecord {
        target: set.target,
        enterprise_number: engine_id.enterprise_number(),
        vendor: vendor_from_engine_id(&engine_id, dict).name,
        engine_id,
    }))
}

pub fn write_labels<W: Write>(out: W, labels: &[LabelRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for l in labels {
        w.serialize(l)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels<R: Read>(input: R) -> Result<Vec<LabelRecord>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}
