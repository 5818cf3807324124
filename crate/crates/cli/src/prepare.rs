use simcgnn::data::{
    build_dataset, load_sessions, preprocess, split, write_bundle, Bundle, FilterConfig, FormatDescriptor, OrderKind,
    SplitPolicy, SyntheticConfig,
};

use crate::error::{CliError, CliResult};
use crate::{Format, OrderKindArg, PrepareArgs};

const DEFAULT_TEST_FRACTION: f64 = 0.2;

fn format(a: &PrepareArgs) -> FormatDescriptor {
    match a.format {
        Format::Yoochoose => FormatDescriptor::yoochoose(),
        Format::Diginetica => FormatDescriptor::diginetica(),
        Format::Custom => FormatDescriptor {
            delimiter: a.delimiter,
            has_header: a.header,
            session_col: a.session_col,
            item_col: a.item_col,
            order_col: a.order_col,
            order_kind: match a.order_kind {
                OrderKindArg::Integer => OrderKind::Integer,
                OrderKindArg::Lexical => OrderKind::Lexical,
            },
        },
    }
}

fn from_log(a: &PrepareArgs) -> CliResult<Bundle> {
    let input = a.input.as_ref().expect("clap requires --input without --synthetic");
    let log = load_sessions(input, &format(a))?;
    let filter = FilterConfig {
        min_item_count: a.min_item_count,
        min_session_len: a.min_session_len,
    };
    let (log, _) = preprocess(&log, &filter)?;
    let policy = match a.test_span {
        Some(span) => SplitPolicy::TimeCutoff(span),
        None => SplitPolicy::MostRecentFraction(a.test_fraction.unwrap_or(DEFAULT_TEST_FRACTION)),
    };
    let (train, test) = split(&log, &policy, a.train_fraction)?;
    Ok(build_dataset(&train, &test, a.max_prefix.unwrap_or(usize::MAX))?)
}

fn synthetic(a: &PrepareArgs) -> CliResult<Bundle> {
    if a.test_span.is_some() || a.train_fraction.is_some() {
        return Err(CliError::usage(
            "--test-span and --train-fraction apply to click logs only",
        ));
    }
    let cfg = SyntheticConfig {
        num_items: a.items,
        num_sessions: a.sessions,
        popularity_exponent: a.popularity_exponent,
        last_item_collision_rate: a.collision_rate,
        repeat_rate: a.repeat_rate,
        markov_rate: a.markov_rate,
        min_len: a.min_len,
        max_len: a.max_len,
        test_fraction: a.test_fraction.unwrap_or(DEFAULT_TEST_FRACTION),
        seed: a.seed,
    };
    cfg.generate().map_err(|e| CliError::usage(e.to_string()))
}

pub fn run(a: PrepareArgs) -> CliResult<()> {
    let bundle = if a.synthetic { synthetic(&a)? } else { from_log(&a)? };
    write_bundle(&a.out, &bundle)?;
    let stats = serde_json::json!({
        "bundle": a.out,
        "fingerprint": bundle.fingerprint(),
        "stats": bundle.stats,
        "dropped_test_sessions": bundle.dropped_test_sessions,
    });
    println!("{stats}");
    Ok(())
}
