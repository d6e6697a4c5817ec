//! Line-oriented event log. The executor changes its state only by applying
//! events, so replaying a log reproduces the final state exactly.

use super::{Phase, ProcedureState};
use crate::error::{invalid, Error, Result};
use crate::registration::{AxisOrientation, RegistrationTransform};
use crate::table::{write_preamble, CsvTable};

pub const EVENT_HEADER: &str = "t_s,phase,event,detail";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// Transition into the event's phase.
    Enter,
    ErrorReport,
    Registration,
    SanityPassed,
    SanityFailed,
    InjectStart,
    InjectEnd,
    RpeTouch,
    /// Transition into `Aborted`; the detail is the reason.
    Abort,
    /// Informational only.
    Note,
}

impl EventKind {
    const ALL: [EventKind; 10] = [
        EventKind::Enter,
        EventKind::ErrorReport,
        EventKind::Registration,
        EventKind::SanityPassed,
        EventKind::SanityFailed,
        EventKind::InjectStart,
        EventKind::InjectEnd,
        EventKind::RpeTouch,
        EventKind::Abort,
        EventKind::Note,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Enter => "enter",
            EventKind::ErrorReport => "error_report",
            EventKind::Registration => "registration",
            EventKind::SanityPassed => "sanity_passed",
            EventKind::SanityFailed => "sanity_failed",
            EventKind::InjectStart => "inject_start",
            EventKind::InjectEnd => "inject_end",
            EventKind::RpeTouch => "rpe_touch",
            EventKind::Abort => "abort",
            EventKind::Note => "note",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t_us: u64,
    /// Phase after the event took effect.
    pub phase: Phase,
    pub kind: EventKind,
    /// Free text without commas or newlines.
    pub detail: String,
}

fn orientation_str(o: AxisOrientation) -> &'static str {
    match o {
        AxisOrientation::Opposed => "opposed",
        AxisOrientation::Aligned => "aligned",
    }
}

pub(crate) fn registration_detail(r: &RegistrationTransform, n_rejected: usize) -> String {
    // `{}` on f64 prints the shortest representation that parses back exactly.
    format!(
        "b={};p_init={};z_init={};orientation={};n_rejected={n_rejected}",
        r.b,
        r.p_init,
        r.z_init,
        orientation_str(r.orientation)
    )
}

fn field<'a>(detail: &'a str, key: &str) -> Result<&'a str> {
    detail
        .split(';')
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| invalid("event detail", format!("missing '{key}' in '{detail}'")))
}

fn num(detail: &str, key: &str) -> Result<f64> {
    field(detail, key)?
        .parse()
        .map_err(|_| invalid("event detail", format!("bad number for '{key}' in '{detail}'")))
}

fn parse_registration(detail: &str) -> Result<RegistrationTransform> {
    let orientation = match field(detail, "orientation")? {
        "opposed" => AxisOrientation::Opposed,
        "aligned" => AxisOrientation::Aligned,
        other => return Err(invalid("event detail", format!("unknown orientation '{other}'"))),
    };
    Ok(RegistrationTransform {
        b: num(detail, "b")?,
        p_init: num(detail, "p_init")?,
        z_init: num(detail, "z_init")?,
        orientation,
    })
}

/// Applies one event to `state`.
pub(crate) fn apply(state: &mut ProcedureState, ev: &Event, restart_allowed: bool) -> Result<()> {
    match ev.kind {
        EventKind::Enter => state.advance(ev.phase, restart_allowed)?,
        EventKind::Abort => {
            state.advance(Phase::Aborted, restart_allowed)?;
            state.abort_reason = Some(ev.detail.clone());
        }
        EventKind::ErrorReport => state.e = Some(num(&ev.detail, "e_mm")?),
        EventKind::Registration => state.registration = Some(parse_registration(&ev.detail)?),
        EventKind::SanityPassed => state.sanity_passed = true,
        EventKind::SanityFailed => state.sanity_passed = false,
        EventKind::InjectEnd => state.injection_success = field(&ev.detail, "success")? == "true",
        EventKind::InjectStart | EventKind::RpeTouch | EventKind::Note => {}
    }
    if ev.phase != state.phase {
        return Err(invalid(
            "event log",
            format!("event tagged {} while in {}", ev.phase.as_str(), state.phase.as_str()),
        ));
    }
    Ok(())
}

/// Rebuilds the final state from a log.
pub fn replay(events: &[Event]) -> Result<ProcedureState> {
    let mut s = ProcedureState::default();
    for ev in events {
        apply(&mut s, ev, true)?;
    }
    Ok(s)
}

fn fmt_time(t_us: u64) -> String {
    format!("{}.{:06}", t_us / 1_000_000, t_us % 1_000_000)
}

fn parse_time(s: &str) -> Option<u64> {
    let (whole, frac) = s.split_once('.')?;
    if frac.len() != 6 {
        return None;
    }
    Some(whole.parse::<u64>().ok()? * 1_000_000 + frac.parse::<u64>().ok()?)
}

pub fn events_to_csv(events: &[Event], comments: &[String]) -> String {
    let mut out = String::new();
    write_preamble(&mut out, comments, EVENT_HEADER);
    for e in events {
        out.push_str(&format!("{},{},{},{}\n", fmt_time(e.t_us), e.phase.as_str(), e.kind.as_str(), e.detail));
    }
    out
}

pub fn events_from_csv(text: &str) -> Result<(Vec<Event>, Vec<String>)> {
    let table = CsvTable::parse(text, EVENT_HEADER)?;
    let mut events = Vec::with_capacity(table.rows.len());
    for (line, cells) in &table.rows {
        let bad = |message: String| Error::Parse { line: *line, message };
        let t_us = parse_time(&cells[0]).ok_or_else(|| bad(format!("bad time '{}'", cells[0])))?;
        let phase = cells[1].parse().map_err(|e: Error| bad(e.to_string()))?;
        let kind = EventKind::ALL
            .into_iter()
            .find(|k| k.as_str() == cells[2])
            .ok_or_else(|| bad(format!("unknown event '{}'", cells[2])))?;
        events.push(Event {
            t_us,
            phase,
            kind,
            detail: cells[3].clone(),
        });
    }
    Ok((events, table.comments))
}
