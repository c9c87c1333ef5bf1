use std::io::{BufRead, Write};

use super::scenario::ScenarioError;
use super::world::{run_station, SimLink};
use super::report::ScenarioReport;
use crate::rfid::{FdxbFrame, RfidDetection, TagId};
use crate::station::{StationConfig, StationInput};
use crate::weighing::trace::parse_line as parse_sample;

/// Read a station trace: `t_ms,grams` samples, `tag,t_ms,CCC_NNNNNNNNNNNN`
/// reads and `frame,t_ms,<32 hex digits>` raw reader frames. Records must
/// be in time order.
pub fn read_station_trace<R: BufRead>(reader: R, station_id: u16) -> Result<Vec<StationInput>, ScenarioError> {
    let mut out: Vec<StationInput> = Vec::new();
    let mut last = i64::MIN;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let err = |message: String| ScenarioError::Parse { line: line_no, message };
        let text = line.trim();
        let input = if let Some(rest) = text.strip_prefix("tag,") {
            let (t, tag) = rest.split_once(',').ok_or_else(|| err("expected `tag,t_ms,tag`".into()))?;
            let ts: i64 = t.trim().parse().map_err(|e| err(format!("timestamp: {e}")))?;
            let tag: TagId = tag.trim().parse().map_err(|e| err(format!("tag: {e}")))?;
            StationInput::Detection(RfidDetection { tag, ts, station_id })
        } else if let Some(rest) = text.strip_prefix("frame,") {
            let (t, hex) = rest.split_once(',').ok_or_else(|| err("expected `frame,t_ms,hex`".into()))?;
            let ts: i64 = t.trim().parse().map_err(|e| err(format!("timestamp: {e}")))?;
            let frame = FdxbFrame::from_hex(hex.trim()).map_err(|e| err(format!("frame: {e}")))?;
            StationInput::Frame { ts, frame }
        } else {
            match parse_sample(text, line_no).map_err(|e| err(e.to_string()))? {
                Some(s) => StationInput::Sample(s),
                None => continue,
            }
        };
        if input.ts() < last {
            return Err(err(format!("timestamp {} before {last}", input.ts())));
        }
        last = input.ts();
        out.push(input);
    }
    Ok(out)
}

/// Write inputs in the replay format. Weights are rounded to 1 mg.
pub fn write_station_trace<W: Write>(mut w: W, inputs: &[StationInput]) -> std::io::Result<()> {
    for input in inputs {
        match input {
            StationInput::Sample(s) => writeln!(w, "{},{:.3}", s.t, s.grams)?,
            StationInput::Detection(d) => writeln!(w, "tag,{},{}", d.ts, d.tag)?,
            StationInput::Frame { ts, frame } => writeln!(w, "frame,{},{}", ts, frame.to_hex())?,
            _ => {}
        }
    }
    Ok(())
}

/// Run recorded inputs through the same station, link and server as a
/// generated scenario. There is no ground truth, so only station, link and
/// server figures are reported.
pub fn replay(name: &str, inputs: Vec<StationInput>, cfg: StationConfig, seed: u64) -> Result<ScenarioReport, ScenarioError> {
    let period = cfg.system_update_period_s;
    let Some(last) = inputs.last().map(|i| i.ts()) else {
        return Ok(ScenarioReport::base(name, seed, 0, &Default::default(), &Default::default(), &[], Default::default(), period));
    };
    let duration_ms = last + 1;
    let link = SimLink::new(cfg.link.clone(), seed, cfg.epoch_s);
    let (summary, log, world) = run_station(cfg, inputs, link, duration_ms)?;
    let visits: Vec<_> = world.server().visits().cloned().collect();
    Ok(ScenarioReport::base(name, seed, duration_ms, &summary, &log, &visits, world.stats(), period))
}
