//! Five-field cron expressions, next-fire computation and a no-overlap
//! job runner with an injectable clock.
//!
//! Fields are minute, hour, day of month, month, day of week (0 = Sunday).
//! Each accepts `*`, `n`, `a-b`, lists `a,b,c` and steps `*/n`, `a-b/n`.
//! When both day fields are restricted a day matches if either matches.
//! All times are UTC.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Datelike, Days, Months, NaiveDate, TimeDelta, Timelike, Utc};

/// How far ahead `next_fire` searches before declaring a schedule unsatisfiable.
pub const SEARCH_HORIZON_YEARS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Minute,
    Hour,
    DayOfMonth,
    Month,
    DayOfWeek,
}

impl Field {
    const ALL: [Field; 5] = [Field::Minute, Field::Hour, Field::DayOfMonth, Field::Month, Field::DayOfWeek];

    pub fn bounds(self) -> (u32, u32) {
        match self {
            Field::Minute => (0, 59),
            Field::Hour => (0, 23),
            Field::DayOfMonth => (1, 31),
            Field::Month => (1, 12),
            Field::DayOfWeek => (0, 6),
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Field::Minute => "minute",
            Field::Hour => "hour",
            Field::DayOfMonth => "day-of-month",
            Field::Month => "month",
            Field::DayOfWeek => "day-of-week",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CronError {
    #[error("expected 5 fields, found {0}")]
    WrongFieldCount(usize),
    #[error("{field} value {value} outside {min}-{max}")]
    OutOfRange { field: Field, value: u32, min: u32, max: u32 },
    #[error("{field} step must be positive")]
    ZeroStep { field: Field },
    #[error("{field} list has an empty element")]
    EmptyListElement { field: Field },
    #[error("{field}: cannot parse {text:?}")]
    InvalidValue { field: Field, text: String },
    #[error("schedule has no fire time within {SEARCH_HORIZON_YEARS} years of {after}")]
    Unsatisfiable { after: DateTime<Utc> },
}

/// Parsed cron expression: one membership bitset per field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CronSchedule {
    minutes: u64,
    hours: u32,
    days_of_month: u32,
    months: u16,
    days_of_week: u8,
    dom_restricted: bool,
    dow_restricted: bool,
}

fn bits_to_vec(bits: u64) -> Vec<u32> {
    (0..64).filter(|i| bits & (1 << i) != 0).collect()
}

impl CronSchedule {
    pub fn minutes(&self) -> Vec<u32> {
        bits_to_vec(self.minutes)
    }
    pub fn hours(&self) -> Vec<u32> {
        bits_to_vec(self.hours.into())
    }
    pub fn days_of_month(&self) -> Vec<u32> {
        bits_to_vec(self.days_of_month.into())
    }
    pub fn months(&self) -> Vec<u32> {
        bits_to_vec(self.months.into())
    }
    pub fn days_of_week(&self) -> Vec<u32> {
        bits_to_vec(self.days_of_week.into())
    }
    pub fn dom_restricted(&self) -> bool {
        self.dom_restricted
    }
    pub fn dow_restricted(&self) -> bool {
        self.dow_restricted
    }

    pub fn matches_minute(&self, m: u32) -> bool {
        self.minutes & (1 << m) != 0
    }
    pub fn matches_hour(&self, h: u32) -> bool {
        self.hours & (1 << h) != 0
    }
    pub fn matches_month(&self, m: u32) -> bool {
        self.months & (1 << m) != 0
    }

    /// Day rule: both restricted -> either matches; otherwise the restricted one (if any).
    pub fn matches_day(&self, date: NaiveDate) -> bool {
        let dom = self.days_of_month & (1 << date.day()) != 0;
        let dow = self.days_of_week & (1 << date.weekday().num_days_from_sunday()) != 0;
        match (self.dom_restricted, self.dow_restricted) {
            (true, true) => dom || dow,
            (true, false) => dom,
            (false, true) => dow,
            (false, false) => true,
        }
    }

    pub fn matches(&self, t: DateTime<Utc>) -> bool {
        t.second() == 0
            && t.nanosecond() == 0
            && self.matches_minute(t.minute())
            && self.matches_hour(t.hour())
            && self.matches_month(t.month())
            && self.matches_day(t.date_naive())
    }
}

impl FromStr for CronSchedule {
    type Err = CronError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_cron(s)
    }
}

pub fn parse_cron(expr: &str) -> Result<CronSchedule, CronError> {
    let fields: Vec<&str> = expr.split_whitespace().collect();
    if fields.len() != 5 {
        return Err(CronError::WrongFieldCount(fields.len()));
    }
    let mut sets = [0u64; 5];
    for ((text, field), set) in fields.iter().zip(Field::ALL).zip(sets.iter_mut()) {
        *set = parse_field(text, field)?;
    }
    Ok(CronSchedule {
        minutes: sets[0],
        hours: sets[1] as u32,
        days_of_month: sets[2] as u32,
        months: sets[3] as u16,
        days_of_week: sets[4] as u8,
        dom_restricted: fields[2] != "*",
        dow_restricted: fields[4] != "*",
    })
}

fn parse_field(text: &str, field: Field) -> Result<u64, CronError> {
    let (min, max) = field.bounds();
    let invalid = || CronError::InvalidValue { field, text: text.to_owned() };
    let value = |s: &str| -> Result<u32, CronError> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(invalid());
        }
        let v: u32 = s.parse().map_err(|_| CronError::OutOfRange { field, value: u32::MAX, min, max })?;
        if v < min || v > max {
            return Err(CronError::OutOfRange { field, value: v, min, max });
        }
        Ok(v)
    };

    let mut set = 0u64;
    for item in text.split(',') {
        if item.is_empty() {
            return Err(CronError::EmptyListElement { field });
        }
        let (range, step) = match item.split_once('/') {
            Some((r, s)) => {
                if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(invalid());
                }
                let step: u32 = s.parse().unwrap_or(u32::MAX);
                if step == 0 {
                    return Err(CronError::ZeroStep { field });
                }
                (r, Some(step))
            }
            None => (item, None),
        };
        let (lo, hi) = if range == "*" {
            (min, max)
        } else if let Some((a, b)) = range.split_once('-') {
            let (a, b) = (value(a)?, value(b)?);
            if a > b {
                return Err(invalid());
            }
            (a, b)
        } else {
            // `n/step` is not part of the accepted syntax
            if step.is_some() {
                return Err(invalid());
            }
            let v = value(range)?;
            (v, v)
        };
        let step = step.unwrap_or(1) as usize;
        for v in (lo..=hi).step_by(step) {
            set |= 1 << v;
        }
    }
    Ok(set)
}

fn floor_minute(t: DateTime<Utc>) -> DateTime<Utc> {
    t.with_second(0).and_then(|t| t.with_nanosecond(0)).expect("second 0 always valid")
}

fn midnight(d: NaiveDate) -> DateTime<Utc> {
    d.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
}

/// Smallest minute-aligned instant strictly after `after` matching `s`.
pub fn next_fire(s: &CronSchedule, after: DateTime<Utc>) -> Result<DateTime<Utc>, CronError> {
    let limit =
        after.checked_add_months(Months::new(12 * SEARCH_HORIZON_YEARS)).ok_or(CronError::Unsatisfiable { after })?;
    let mut t = floor_minute(after) + TimeDelta::minutes(1);
    while t <= limit {
        let date = t.date_naive();
        if !s.matches_month(t.month()) {
            let first = date.with_day(1).expect("day 1") + Months::new(1);
            t = midnight(first);
            continue;
        }
        if !s.matches_day(date) {
            t = midnight(date + Days::new(1));
            continue;
        }
        if !s.matches_hour(t.hour()) {
            t = floor_minute(t.with_minute(0).expect("minute 0")) + TimeDelta::hours(1);
            continue;
        }
        let rest = s.minutes >> t.minute();
        if rest == 0 {
            t = t.with_minute(0).expect("minute 0") + TimeDelta::hours(1);
            continue;
        }
        return Ok(t + TimeDelta::minutes(i64::from(rest.trailing_zeros())));
    }
    Err(CronError::Unsatisfiable { after })
}

/// When the scheduler fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trigger {
    Cron(CronSchedule),
    /// Every `period` after the scheduler starts.
    Every(Duration),
}

impl Trigger {
    /// Next fire strictly after `after`; `anchor` is the scheduler start,
    /// used by fixed-interval triggers.
    pub fn next_after(&self, anchor: DateTime<Utc>, after: DateTime<Utc>) -> Result<DateTime<Utc>, CronError> {
        match self {
            Trigger::Cron(s) => next_fire(s, after),
            Trigger::Every(period) => {
                let period = TimeDelta::from_std(*period).unwrap_or(TimeDelta::MAX).max(TimeDelta::microseconds(1));
                if after < anchor {
                    return Ok(anchor + period);
                }
                let elapsed = (after - anchor).num_microseconds().unwrap_or(i64::MAX);
                let k = elapsed / period.num_microseconds().unwrap_or(i64::MAX) + 1;
                Ok(anchor + period * k as i32)
            }
        }
    }
}

/// Source of time for the scheduler.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    /// Blocks until `t` or until `stop` is raised. Returns false if stopped.
    fn sleep_until(&self, t: DateTime<Utc>, stop: &AtomicBool) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep_until(&self, t: DateTime<Utc>, stop: &AtomicBool) -> bool {
        loop {
            if stop.load(Ordering::SeqCst) {
                return false;
            }
            let left = t - Utc::now();
            if left <= TimeDelta::zero() {
                return true;
            }
            let nap = left.to_std().unwrap_or_default().min(Duration::from_millis(50));
            std::thread::sleep(nap);
        }
    }
}

/// Manually driven clock. Sleeping jumps straight to the wake-up time.
#[derive(Debug, Clone)]
pub struct SimClock {
    now: Arc<Mutex<DateTime<Utc>>>,
}

impl SimClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        SimClock { now: Arc::new(Mutex::new(start)) }
    }

    pub fn advance(&self, by: Duration) {
        let mut now = self.now.lock().unwrap();
        *now += TimeDelta::from_std(by).expect("duration fits");
    }

    pub fn set(&self, t: DateTime<Utc>) {
        *self.now.lock().unwrap() = t;
    }
}

impl Clock for SimClock {
    fn now(&self) -> DateTime<Utc> {
        *self.now.lock().unwrap()
    }

    fn sleep_until(&self, t: DateTime<Utc>, stop: &AtomicBool) -> bool {
        if stop.load(Ordering::SeqCst) {
            return false;
        }
        let mut now = self.now.lock().unwrap();
        if *now < t {
            *now = t;
        }
        true
    }
}

/// What happens to a fire that arrives while the previous run is busy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Overlap {
    #[default]
    Skip,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct JobPolicy {
    pub overlap: Overlap,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunEntry {
    Invoked { scheduled: DateTime<Utc>, started: DateTime<Utc>, finished: DateTime<Utc>, error: Option<String> },
    Skipped { scheduled: DateTime<Utc> },
}

impl RunEntry {
    pub fn scheduled(&self) -> DateTime<Utc> {
        match self {
            RunEntry::Invoked { scheduled, .. } | RunEntry::Skipped { scheduled } => *scheduled,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub entries: Vec<RunEntry>,
    /// Set when the trigger could not produce another fire time.
    pub halted: Option<String>,
}

impl RunLog {
    pub fn invocations(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, RunEntry::Invoked { .. })).count()
    }

    pub fn skips(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, RunEntry::Skipped { .. })).count()
    }

    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, RunEntry::Invoked { error: Some(_), .. })).count()
    }

    /// Every scheduled instant, invoked or skipped, in order.
    pub fn fire_instants(&self) -> Vec<DateTime<Utc>> {
        self.entries.iter().map(RunEntry::scheduled).collect()
    }
}

/// Passed to each job invocation.
#[derive(Debug, Clone, Copy)]
pub struct FireContext {
    pub scheduled: DateTime<Utc>,
    /// 1-based count of invocations so far, including this one.
    pub run: u64,
}

/// Runs a job on the calling thread at each fire of a trigger.
pub struct Scheduler<C: Clock> {
    trigger: Trigger,
    policy: JobPolicy,
    clock: C,
    busy: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
}

impl<C: Clock> Scheduler<C> {
    pub fn new(trigger: Trigger, policy: JobPolicy, clock: C) -> Self {
        Scheduler {
            trigger,
            policy,
            clock,
            busy: Arc::new(AtomicBool::new(false)),
            stop: Arc::new(AtomicBool::new(false)),
        }
    }

    /// Shared flag; raising it ends `run` before the next fire.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    pub fn with_stop_flag(mut self, stop: Arc<AtomicBool>) -> Self {
        self.stop = stop;
        self
    }

    pub fn busy_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.busy)
    }

    pub fn clock(&self) -> &C {
        &self.clock
    }

    /// Fires the job at every trigger instant up to and including `until`
    /// (forever when `None`) or until stopped. Job errors are recorded and
    /// do not stop the loop; the caller may inspect the log to decide.
    pub fn run<E, F>(&self, until: Option<DateTime<Utc>>, mut job: F) -> RunLog
    where
        E: fmt::Display,
        F: FnMut(&FireContext) -> Result<(), E>,
    {
        self.run_while(until, |ctx| job(ctx).map_err(|e| e.to_string()), |_| true)
    }

    /// Like [`run`](Self::run) but `keep_going` is consulted after every
    /// invocation with the log so far.
    pub fn run_while<F, K>(&self, until: Option<DateTime<Utc>>, mut job: F, mut keep_going: K) -> RunLog
    where
        F: FnMut(&FireContext) -> Result<(), String>,
        K: FnMut(&RunLog) -> bool,
    {
        let Overlap::Skip = self.policy.overlap;
        let anchor = self.clock.now();
        let mut log = RunLog::default();
        let mut prev = anchor;
        let mut runs = 0;
        let within = |t: DateTime<Utc>| until.is_none_or(|u| t <= u);
        loop {
            let fire = match self.trigger.next_after(anchor, prev) {
                Ok(t) => t,
                Err(e) => {
                    log.halted = Some(e.to_string());
                    break;
                }
            };
            if !within(fire) || !self.clock.sleep_until(fire, &self.stop) {
                break;
            }
            if self.busy.swap(true, Ordering::SeqCst) {
                log.entries.push(RunEntry::Skipped { scheduled: fire });
                prev = fire;
                continue;
            }
            runs += 1;
            let started = self.clock.now();
            let result = job(&FireContext { scheduled: fire, run: runs });
            let finished = self.clock.now();
            self.busy.store(false, Ordering::SeqCst);
            log.entries.push(RunEntry::Invoked { scheduled: fire, started, finished, error: result.err() });
            prev = fire;
            // fires that came due while the job was still running
            loop {
                match self.trigger.next_after(anchor, prev) {
                    Ok(next) if next < finished && within(next) => {
                        log.entries.push(RunEntry::Skipped { scheduled: next });
                        prev = next;
                    }
                    Ok(next) if next < finished => {
                        prev = next;
                    }
                    _ => break,
                }
            }
            if !keep_going(&log) {
                break;
            }
        }
        log
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn at(y: i32, mo: u32, d: u32, h: u32, mi: u32, s: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, mo, d, h, mi, s).unwrap()
    }

    fn brute_force(s: &CronSchedule, after: DateTime<Utc>) -> Option<DateTime<Utc>> {
        let mut t = floor_minute(after) + TimeDelta::minutes(1);
        let limit = after + TimeDelta::days(366 * 5);
        while t <= limit {
            if s.matches(t) {
                return Some(t);
            }
            t += TimeDelta::minutes(1);
        }
        None
    }

    #[test]
    fn hourly_expression() {
        let s = parse_cron("0 * * * *").unwrap();
        assert_eq!(s.minutes(), vec![0]);
        assert_eq!(s.hours(), (0..24).collect::<Vec<_>>());
        assert_eq!(s.days_of_month(), (1..32).collect::<Vec<_>>());
        assert_eq!(s.months(), (1..13).collect::<Vec<_>>());
        assert_eq!(s.days_of_week(), (0..7).collect::<Vec<_>>());
        assert!(!s.dom_restricted() && !s.dow_restricted());
    }

    #[test]
    fn steps_and_lists() {
        let s = parse_cron("*/15 2 * * 1").unwrap();
        assert_eq!(s.minutes(), vec![0, 15, 30, 45]);
        assert_eq!(s.hours(), vec![2]);
        assert_eq!(s.days_of_week(), vec![1]);
        assert!(s.dow_restricted() && !s.dom_restricted());

        let s = parse_cron("1,5-7,10-20/5 * * * *").unwrap();
        assert_eq!(s.minutes(), vec![1, 5, 6, 7, 10, 15, 20]);
    }

    #[test]
    fn parse_errors() {
        use CronError::*;
        assert!(matches!(parse_cron("61 * * * *"), Err(OutOfRange { field: Field::Minute, value: 61, .. })));
        assert_eq!(parse_cron("* * * *"), Err(WrongFieldCount(4)));
        assert_eq!(parse_cron("* * * * * *"), Err(WrongFieldCount(6)));
        assert_eq!(parse_cron("*/0 * * * *"), Err(ZeroStep { field: Field::Minute }));
        assert_eq!(parse_cron("1,,2 * * * *"), Err(EmptyListElement { field: Field::Minute }));
        assert!(matches!(parse_cron("* * 0 * *"), Err(OutOfRange { field: Field::DayOfMonth, .. })));
        assert!(matches!(parse_cron("* * * 13 *"), Err(OutOfRange { field: Field::Month, .. })));
        assert!(matches!(parse_cron("* * * * 7"), Err(OutOfRange { field: Field::DayOfWeek, .. })));
        assert!(matches!(parse_cron("5-1 * * * *"), Err(InvalidValue { .. })));
        assert!(matches!(parse_cron("x * * * *"), Err(InvalidValue { .. })));
        assert!(matches!(parse_cron("5/2 * * * *"), Err(InvalidValue { .. })));
        assert!(matches!(parse_cron("99999999999 * * * *"), Err(OutOfRange { .. })));
    }

    #[test]
    fn next_fire_examples() {
        let hourly = parse_cron("0 * * * *").unwrap();
        assert_eq!(next_fire(&hourly, at(2021, 3, 1, 10, 15, 0)).unwrap(), at(2021, 3, 1, 11, 0, 0));
        let every = parse_cron("* * * * *").unwrap();
        assert_eq!(next_fire(&every, at(2021, 3, 1, 10, 15, 30)).unwrap(), at(2021, 3, 1, 10, 16, 0));
        let leap = parse_cron("0 0 29 2 *").unwrap();
        let start = at(2021, 1, 1, 0, 0, 0);
        let want = brute_force(&leap, start).unwrap();
        assert_eq!(want, at(2024, 2, 29, 0, 0, 0));
        assert_eq!(next_fire(&leap, start).unwrap(), want);
    }

    #[test]
    fn unsatisfiable_schedule() {
        let s = parse_cron("0 0 30 2 *").unwrap();
        assert!(matches!(next_fire(&s, at(2021, 1, 1, 0, 0, 0)), Err(CronError::Unsatisfiable { .. })));
    }

    #[test]
    fn dom_dow_or_rule() {
        // the 13th or any Friday
        let s = parse_cron("0 0 13 * 5").unwrap();
        // 2021-03-05 is a Friday
        assert_eq!(next_fire(&s, at(2021, 3, 1, 0, 0, 0)).unwrap(), at(2021, 3, 5, 0, 0, 0));
        assert_eq!(next_fire(&s, at(2021, 3, 12, 0, 0, 0)).unwrap(), at(2021, 3, 13, 0, 0, 0));
        // only dow restricted
        let s = parse_cron("0 0 * * 5").unwrap();
        assert_eq!(next_fire(&s, at(2021, 3, 12, 0, 0, 0)).unwrap(), at(2021, 3, 19, 0, 0, 0));
    }

    #[test]
    fn fixed_examples_match_brute_force() {
        for expr in ["*/7 3-5 * * *", "30 23 31 * *", "0 12 1,15 1-6 1-5", "59 23 * 12 0", "*/13 */5 */3 */2 */4"] {
            let s = parse_cron(expr).unwrap();
            let mut t = at(2020, 12, 30, 22, 59, 59);
            for _ in 0..20 {
                let want = brute_force(&s, t).unwrap();
                assert_eq!(next_fire(&s, t).unwrap(), want, "{expr} after {t}");
                t = want;
            }
        }
    }

    #[test]
    fn every_trigger_is_anchored() {
        let anchor = at(2021, 1, 1, 0, 0, 0);
        let every = Trigger::Every(Duration::from_secs(10));
        assert_eq!(every.next_after(anchor, anchor).unwrap(), at(2021, 1, 1, 0, 0, 10));
        assert_eq!(every.next_after(anchor, at(2021, 1, 1, 0, 0, 15)).unwrap(), at(2021, 1, 1, 0, 0, 20));
        assert_eq!(every.next_after(anchor, at(2021, 1, 1, 0, 0, 20)).unwrap(), at(2021, 1, 1, 0, 0, 30));
    }

    fn sim_run(job_secs: u64) -> RunLog {
        let start = at(2021, 3, 1, 10, 0, 0);
        let clock = SimClock::new(start);
        let sched =
            Scheduler::new(Trigger::Cron(parse_cron("* * * * *").unwrap()), JobPolicy::default(), clock.clone());
        sched.run(Some(start + TimeDelta::minutes(3)), |_| {
            clock.advance(Duration::from_secs(job_secs));
            Ok::<(), String>(())
        })
    }

    #[test]
    fn short_jobs_fire_every_minute() {
        let mut log = sim_run(0);
        assert_eq!(log.invocations(), 3);
        assert_eq!(log.skips(), 0);
        // a 10 ms job is the same as far as whole-minute fires are concerned
        let start = at(2021, 3, 1, 10, 0, 0);
        let clock = SimClock::new(start);
        let sched =
            Scheduler::new(Trigger::Cron(parse_cron("* * * * *").unwrap()), JobPolicy::default(), clock.clone());
        log = sched.run(Some(start + TimeDelta::minutes(3)), |_| {
            clock.advance(Duration::from_millis(10));
            Ok::<(), String>(())
        });
        assert_eq!(log.invocations(), 3);
    }

    #[test]
    fn long_job_skips_overlapping_fire() {
        let log = sim_run(90);
        assert_eq!(log.invocations(), 2);
        assert_eq!(log.skips(), 1);
    }

    #[test]
    fn fire_chain_equals_next_fire_chain() {
        let log = sim_run(90);
        let s = parse_cron("* * * * *").unwrap();
        let mut t = at(2021, 3, 1, 10, 0, 0);
        let mut chain = Vec::new();
        for _ in 0..log.entries.len() {
            t = next_fire(&s, t).unwrap();
            chain.push(t);
        }
        assert_eq!(log.fire_instants(), chain);
    }

    #[test]
    fn failures_do_not_stop_scheduler() {
        let start = at(2021, 3, 1, 10, 0, 0);
        let clock = SimClock::new(start);
        let sched = Scheduler::new(Trigger::Every(Duration::from_secs(10)), JobPolicy::default(), clock);
        let log =
            sched.run(Some(start + TimeDelta::seconds(80)), |ctx| if ctx.run % 2 == 0 { Err("boom") } else { Ok(()) });
        assert_eq!(log.invocations(), 8);
        assert_eq!(log.failures(), 4);
    }

    #[test]
    fn stop_flag_ends_run() {
        let start = at(2021, 3, 1, 10, 0, 0);
        let sched = Scheduler::new(Trigger::Every(Duration::from_secs(1)), JobPolicy::default(), SimClock::new(start));
        let stop = sched.stop_flag();
        let log = sched.run(None, |ctx| {
            if ctx.run == 5 {
                stop.store(true, Ordering::SeqCst);
            }
            Ok::<(), String>(())
        });
        assert_eq!(log.invocations(), 5);
    }
}
