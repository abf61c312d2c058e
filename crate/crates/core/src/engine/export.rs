//! Event-log export: compact CSV lines or one JSON object per event.

use std::io::{self, Write};

use super::run::{EventLog, EventSummary};
use super::EventRecord;

fn join(queue: &[u64]) -> String {
    queue.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

/// Writes `n,t_n,fired,pre_L,post_L` lines. Queue vectors are `;`-separated.
pub fn write_event_csv<W: Write>(out: &mut W, events: &[EventSummary]) -> io::Result<()> {
    writeln!(out, "n,t_n,fired,pre_L,post_L")?;
    for e in events {
        writeln!(
            out,
            "{},{:.16e},{},{},{}",
            e.index,
            e.time,
            e.fired_mask,
            join(&e.pre_queue),
            join(&e.post_queue)
        )?;
    }
    Ok(())
}

/// Writes each full record as a JSON line.
pub fn write_event_jsonl<W: Write>(out: &mut W, records: &[EventRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes whatever the log holds; a disabled log writes nothing.
pub fn write_event_log<W: Write>(out: &mut W, log: &EventLog) -> io::Result<()> {
    match log {
        EventLog::None => Ok(()),
        EventLog::Summary(v) => write_event_csv(out, v),
        EventLog::Full(v) => write_event_jsonl(out, v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_line_format() {
        let e = EventSummary {
            index: 3,
            time: 0.5,
            fired_mask: "0x2".into(),
            pre_queue: vec![1, 0],
            post_queue: vec![0, 1],
        };
        let mut buf = Vec::new();
        write_event_csv(&mut buf, &[e]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "n,t_n,fired,pre_L,post_L\n3,5.0000000000000000e-1,0x2,1;0,0;1\n");
    }
}
