use std::io::Write;

use clusterperm::io::{ingest_csv, read_estimates, read_raw, IngestError, Ingested, Schema};

fn file(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

#[test]
fn two_cluster_toy() {
    let f = file("cluster_id,treated,outcome\na,0,1.0\nb,1,2.0\na,0,1.5\n");
    let Ingested::Raw(d) = ingest_csv(f.path(), Schema::Raw).unwrap() else { panic!() };
    let design = d.design().unwrap();
    assert_eq!((design.q1(), design.q0()), (1, 1));
    assert_eq!(d.clusters()[0].id, "b");
    assert_eq!(d.n_rows(), 3);
}

#[test]
fn treated_flag_flip_is_rejected_with_lines() {
    let err = read_raw("cluster_id,treated,outcome\na,0,1\nb,1,2\na,1,3\n".as_bytes()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, IngestError::Invalid(_)));
    assert!(msg.contains("line 4") && msg.contains("line 2"), "{msg}");
}

#[test]
fn non_numeric_field_reports_row() {
    let err = read_raw("cluster_id,treated,outcome,post,x1\na,0,1,0,2\nb,1,abc,1,3\n".as_bytes()).unwrap_err();
    match err {
        IngestError::Parse { line, column, value } => {
            assert_eq!((line, column.as_str(), value.as_str()), (3, "outcome", "abc"));
        }
        other => panic!("{other:?}"),
    }
    let err = read_raw("cluster_id,treated,outcome\na,2,1\n".as_bytes()).unwrap_err();
    assert!(matches!(err, IngestError::Parse { line: 2, .. }));
}

#[test]
fn did_file_with_four_and_four() {
    let mut text = String::from("cluster_id,treated,outcome,post,x1\n");
    for k in 0..8 {
        for t in 0..4 {
            let post = (t >= 2) as u8;
            text.push_str(&format!("c{k},{},{},{post},{}\n", (k < 4) as u8, k as f64 + t as f64 * 0.3 + (k * t) as f64 * 0.01, (t * k) % 3));
        }
    }
    let d = read_raw(text.as_bytes()).unwrap();
    assert!(d.has_post());
    assert_eq!(d.covariate_names(), &["x1".to_string()]);
    let design = d.design().unwrap();
    assert_eq!((design.q1(), design.q0()), (4, 4));
}

#[test]
fn header_mismatch() {
    assert!(matches!(read_raw("id,treated,outcome\n".as_bytes()), Err(IngestError::Header { .. })));
    assert!(matches!(read_estimates("cluster_id,treated,outcome\n".as_bytes()), Err(IngestError::Header { .. })));
}

#[test]
fn estimates_are_reordered_treated_first() {
    let (ids, est) = read_estimates("cluster_id,treated,estimate\nc1,0,1\nt1,1,5\nc2,0,2\nt2,1,6\n".as_bytes()).unwrap();
    assert_eq!(ids, ["t1", "t2", "c1", "c2"]);
    assert_eq!(est.values(), &[5.0, 6.0, 1.0, 2.0]);
    assert!(read_estimates("cluster_id,treated,estimate\na,1,1\na,0,2\n".as_bytes()).is_err());
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(
        ingest_csv(std::path::Path::new("/nonexistent/x.csv"), Schema::Raw),
        Err(IngestError::Io { .. })
    ));
}
