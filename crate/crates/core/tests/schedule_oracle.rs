mod common;

use chrono::{DateTime, Duration as TimeDelta, Months, TimeZone, Utc};
use common::{random_cron, CronOracle};
use logreaper::schedule::{next_fire, parse_cron, CronError, JobPolicy, RunEntry, Scheduler, SimClock, Trigger};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn at(s: &str) -> DateTime<Utc> {
    DateTime::parse_from_rfc3339(s).unwrap().with_timezone(&Utc)
}

fn random_instant(rng: &mut impl Rng) -> DateTime<Utc> {
    let secs = rng.random_range(946_684_800i64..4_102_444_800);
    Utc.timestamp_opt(secs, 0).unwrap() + TimeDelta::milliseconds(rng.random_range(0..1000))
}

#[test]
fn fixed_examples() {
    let hourly = parse_cron("0 * * * *").unwrap();
    assert_eq!(next_fire(&hourly, at("2021-03-01T10:15:00Z")).unwrap(), at("2021-03-01T11:00:00Z"));
    let every = parse_cron("* * * * *").unwrap();
    assert_eq!(next_fire(&every, at("2021-03-01T10:15:30Z")).unwrap(), at("2021-03-01T10:16:00Z"));
    let leap = parse_cron("0 0 29 2 *").unwrap();
    assert_eq!(next_fire(&leap, at("2021-01-01T00:00:00Z")).unwrap(), at("2024-02-29T00:00:00Z"));
    assert!(matches!(
        next_fire(&parse_cron("0 0 30 2 *").unwrap(), at("2021-01-01T00:00:00Z")),
        Err(CronError::Unsatisfiable { .. })
    ));
}

#[test]
fn matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut mismatches = Vec::new();
    for _ in 0..500 {
        let expr = random_cron(&mut rng);
        let schedule = parse_cron(&expr).unwrap_or_else(|e| panic!("{expr}: {e}"));
        let oracle = CronOracle::new(&expr);
        for _ in 0..10 {
            let after = random_instant(&mut rng);
            let horizon = after.checked_add_months(Months::new(60)).unwrap();
            let want = oracle.next(after, horizon);
            let got = next_fire(&schedule, after).ok();
            if got != want {
                mismatches.push(format!("{expr} after {after}: got {got:?}, want {want:?}"));
            }
        }
    }
    assert!(mismatches.is_empty(), "{} mismatches:\n{}", mismatches.len(), mismatches.join("\n"));
}

#[test]
fn scheduler_fires_follow_next_fire_chain() {
    let start = at("2021-06-01T00:07:00Z");
    for expr in ["0 * * * *", "*/15 2 * * 1", "30 6 1,15 * *"] {
        let s = parse_cron(expr).unwrap();
        let clock = SimClock::new(start);
        let until = start + TimeDelta::days(30);
        let log =
            Scheduler::new(Trigger::Cron(s), JobPolicy::default(), clock).run(until.into(), |_| Ok::<(), String>(()));
        let mut want = Vec::new();
        let mut t = start;
        loop {
            t = next_fire(&s, t).unwrap();
            if t > until {
                break;
            }
            want.push(t);
        }
        assert_eq!(log.fire_instants(), want, "{expr}");
        assert_eq!(log.skips(), 0);
    }
}

proptest! {
    #[test]
    fn next_fire_is_later_aligned_and_idempotent(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let expr = random_cron(&mut rng);
        let s = parse_cron(&expr).unwrap();
        let after = random_instant(&mut rng);
        if let Ok(t) = next_fire(&s, after) {
            prop_assert!(t > after);
            prop_assert_eq!(t.timestamp() % 60, 0);
            prop_assert_eq!(t.timestamp_subsec_nanos(), 0);
            prop_assert!(s.matches(t));
            prop_assert_eq!(next_fire(&s, t - TimeDelta::minutes(1)).unwrap(), t);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn invocations_never_overlap(seed: u64, every in proptest::option::of(1u64..600)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trigger = match every {
            Some(secs) => Trigger::Every(std::time::Duration::from_secs(secs)),
            None => Trigger::Cron(parse_cron(["* * * * *", "*/5 * * * *", "0,30 * * * *"][rng.random_range(0..3)]).unwrap()),
        };
        let start = at("2022-01-01T00:00:00Z");
        let clock = SimClock::new(start);
        let durations: Vec<u64> = (0..200).map(|_| rng.random_range(0..900)).collect();
        let mut i = 0;
        let log = Scheduler::new(trigger, JobPolicy::default(), clock.clone()).run(Some(start + TimeDelta::hours(6)), |_| {
            clock.advance(std::time::Duration::from_secs(durations[i % durations.len()]));
            i += 1;
            Ok::<(), String>(())
        });
        let spans: Vec<_> = log
            .entries
            .iter()
            .filter_map(|e| match e {
                RunEntry::Invoked { started, finished, .. } => Some((*started, *finished)),
                RunEntry::Skipped { .. } => None,
            })
            .collect();
        prop_assert!(!spans.is_empty());
        for w in spans.windows(2) {
            prop_assert!(w[0].1 <= w[1].0, "{:?} overlaps {:?}", w[0], w[1]);
        }
    }
}
