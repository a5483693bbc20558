use std::collections::BTreeMap;

use gids::can::{parse_log_line, read_log_str, write_log_string, CanFrame, CanId, CanLog, FrameLabel, Timestamp};
use gids::encoder::{
    build_images, decode_raw_row, decode_row, encode_id, read_image_dump, write_image_dump, EncoderConfig,
    EncodingMode, ImageLabel, DIGIT_WIDTH,
};
use gids::synth::{gen_normal_traffic, inject_attack, AttackSpec, IdSchedule, PayloadMode, TrafficProfile};
use proptest::prelude::*;

fn frame() -> impl Strategy<Value = (u64, u16, Vec<u8>, bool)> {
    (0u64..5_000_000, 0u16..=0x7FF, proptest::collection::vec(any::<u8>(), 0..=8), any::<bool>())
}

fn log_from(mut raw: Vec<(u64, u16, Vec<u8>, bool)>) -> CanLog {
    raw.sort_by_key(|f| f.0);
    let frames = raw
        .into_iter()
        .map(|(t, id, data, inj)| {
            let label = if inj { FrameLabel::Injected } else { FrameLabel::Normal };
            CanFrame::new(Timestamp::from_micros(t), CanId::new(u32::from(id)).unwrap(), &data, label).unwrap()
        })
        .collect();
    CanLog::new(frames, "").unwrap()
}

fn ids_log(ids: &[u16], injected: &[bool]) -> CanLog {
    let frames = ids
        .iter()
        .zip(injected)
        .enumerate()
        .map(|(i, (&id, &inj))| {
            let label = if inj { FrameLabel::Injected } else { FrameLabel::Normal };
            CanFrame::new(Timestamp::from_micros(i as u64 * 100), CanId::new(u32::from(id)).unwrap(), &[], label)
                .unwrap()
        })
        .collect();
    CanLog::new(frames, "").unwrap()
}

proptest! {
    #[test]
    fn log_text_round_trip(raw in proptest::collection::vec(frame(), 0..60)) {
        let log = log_from(raw);
        let text = write_log_string(&log);
        let back = read_log_str(&text).unwrap();
        prop_assert_eq!(back.frames(), log.frames());
        prop_assert_eq!(write_log_string(&back), text);
    }

    #[test]
    fn line_parser_never_panics(line in "\\PC{0,80}") {
        let _ = parse_log_line(&line);
    }

    #[test]
    fn near_miss_lines_never_panic(line in "[0-9.,a-fA-FxTR: ]{0,60}") {
        if let Ok(f) = parse_log_line(&line) {
            prop_assert!(f.id.raw() <= 0x7FF_u16);
            prop_assert!(f.dlc() <= 8);
        }
    }

    /// Window count, labels and pixels against a direct recomputation.
    #[test]
    fn images_match_brute_force(
        ids in proptest::collection::vec(0u16..=0x7FF, 0..200),
        inject_mask in any::<u64>(),
        size in 1usize..20,
        stride_frac in 0.0f64..1.0,
        raw in any::<bool>(),
    ) {
        let injected: Vec<bool> = (0..ids.len()).map(|i| (inject_mask >> (i % 64)) & 1 == 1 && i % 7 == 0).collect();
        let log = ids_log(&ids, &injected);
        let stride = 1 + ((size - 1) as f64 * stride_frac) as usize;
        let mode = if raw { EncodingMode::RawBinary } else { EncodingMode::OneHot };
        let cfg = EncoderConfig { input_size: size, stride, mode };
        let images = build_images(&log, &cfg).unwrap();
        let expected = if ids.len() < size { 0 } else { (ids.len() - size) / stride + 1 };
        prop_assert_eq!(images.len(), expected);
        for (k, img) in images.iter().enumerate() {
            let start = k * stride;
            prop_assert_eq!(img.frame_span.clone(), start..start + size);
            let abnormal = injected[start..start + size].iter().any(|&b| b);
            prop_assert_eq!(img.label, if abnormal { ImageLabel::Abnormal } else { ImageLabel::Normal });
            for r in 0..size {
                let decoded = if raw { decode_raw_row(img.row(r)) } else { decode_row(img.row(r)) };
                prop_assert_eq!(decoded.map(|id| id.raw()), Some(ids[start + r]));
            }
        }
        let mut dump = Vec::new();
        write_image_dump(&images, &mut dump).unwrap();
        let back = read_image_dump(dump.as_slice()).unwrap();
        prop_assert_eq!(back.len(), images.len());
        for (a, b) in back.iter().zip(&images) {
            prop_assert_eq!((a.pixels(), a.label), (b.pixels(), b.label));
        }
    }
}

#[test]
fn every_id_round_trips() {
    for raw in 0..=0x7FFu32 {
        let id = CanId::new(raw).unwrap();
        let row = encode_id(id);
        assert_eq!(decode_row(&row), Some(id));
        for block in row.chunks_exact(DIGIT_WIDTH) {
            assert_eq!(block.iter().filter(|&&p| p == 1).count(), 1, "id {raw:#x}");
        }
    }
    assert!(CanId::new(0x800).is_err());
}

fn single(id: u16, period_ms: f64, jitter: f64, seed: u64) -> TrafficProfile {
    let mut schedules = BTreeMap::new();
    schedules.insert(CanId::new(u32::from(id)).unwrap(), IdSchedule { period_ms, jitter });
    TrafficProfile { schedules, payload_mode: PayloadMode::Counter, seed }
}

#[test]
fn per_id_rates_follow_periods() {
    let profile = TrafficProfile::default_vehicle(4);
    let duration = 20.0;
    let log = gen_normal_traffic(&profile, duration).unwrap();
    let mut counts: BTreeMap<CanId, usize> = BTreeMap::new();
    for f in log.frames() {
        *counts.entry(f.id).or_default() += 1;
    }
    assert_eq!(counts.len(), profile.schedules.len());
    for (id, sched) in &profile.schedules {
        let want = duration * 1e3 / sched.period_ms;
        let got = counts[id] as f64;
        assert!((got - want).abs() <= 1.0, "{id}: {got} frames, expected {want}");
    }
    assert!(log.frames().windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
}

#[test]
fn jitter_stays_inside_its_band() {
    let log = gen_normal_traffic(&single(0x100, 10.0, 0.2, 9), 5.0).unwrap();
    for w in log.frames().windows(2) {
        let gap = (w[1].timestamp.as_micros() - w[0].timestamp.as_micros()) as f64;
        assert!((6_000.0..=14_000.0).contains(&gap), "gap {gap}");
    }
}

#[test]
fn injection_count_and_placement() {
    let base = gen_normal_traffic(&TrafficProfile::default_vehicle(1), 10.0).unwrap();
    let first = base.frames()[0].timestamp.as_micros();
    let cases = [
        (AttackSpec::dos(2.0, 3.0), 3333usize),
        (AttackSpec::fuzzy(1.0, 4.5, 2), 7000),
        (AttackSpec::rpm(0.5, 1.0, 3), 500),
        (AttackSpec::gear(0.0, 0.25, 4), 250),
    ];
    for (spec, count) in cases {
        let out = inject_attack(&base, &spec).unwrap();
        // floor(W / P) frames, W in microseconds and P in milliseconds.
        let window_us = (spec.end_s - spec.start_s) * 1e6;
        assert_eq!(count, (window_us / (spec.period_ms * 1e3) + 1e-9).floor() as usize);
        assert_eq!(out.injected_count(), count, "{spec:?}");
        assert_eq!(out.len(), base.len() + count);
        let originals: Vec<&CanFrame> = out.frames().iter().filter(|f| !f.is_injected()).collect();
        assert!(originals.iter().copied().eq(base.frames().iter()));
        for f in out.frames().iter().filter(|f| f.is_injected()) {
            let t = (f.timestamp.as_micros() - first) as f64;
            assert!(t >= spec.start_s * 1e6 && t < spec.end_s * 1e6, "{t}");
            match spec.target_id {
                Some(id) => assert_eq!(f.id, id),
                None if spec.kind.to_string() == "dos" => assert_eq!(f.id.raw(), 0),
                None => {}
            }
        }
    }
}

/// Fuzzy ids spread evenly over the 11-bit space.
#[test]
fn fuzzy_ids_pass_chi_square() {
    let base = gen_normal_traffic(&TrafficProfile::default_vehicle(1), 12.0).unwrap();
    let out = inject_attack(&base, &AttackSpec::fuzzy(1.0, 11.0, 17)).unwrap();
    let mut buckets = [0usize; 16];
    let mut n = 0;
    for f in out.frames().iter().filter(|f| f.is_injected()) {
        buckets[(f.id.raw() >> 7) as usize] += 1;
        n += 1;
    }
    assert_eq!(n, 20_000);
    let expected = n as f64 / 16.0;
    let chi2: f64 = buckets.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 15 degrees of freedom, p = 0.001.
    assert!(chi2 < 37.70, "chi-square {chi2} over {buckets:?}");
}

#[test]
fn inject_is_deterministic() {
    let base = gen_normal_traffic(&single(0x200, 5.0, 0.1, 2), 3.0).unwrap();
    let spec = AttackSpec::fuzzy(0.5, 2.5, 8);
    assert_eq!(inject_attack(&base, &spec).unwrap(), inject_attack(&base, &spec).unwrap());
    let other = AttackSpec::fuzzy(0.5, 2.5, 9);
    assert_ne!(inject_attack(&base, &spec).unwrap().frames(), inject_attack(&base, &other).unwrap().frames());
}
