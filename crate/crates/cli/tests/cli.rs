mod common;

use common::{crossing, etho, glued, labels_csv, square_objects, write, write_dataset};
use etho_cli::engine::objects_json;
use etho_core::behaviors::frames_for_animal;
use etho_core::EventDict;
use serde_json::Value;

fn ingest(dir: &std::path::Path, d: &etho_core::Dataset, objects: Option<&str>) -> String {
    let kp = write_dataset(dir, "keypoints.json", d);
    let out = dir.join("bundle");
    let mut args = vec!["ingest", "--keypoints", kp.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let obj;
    if let Some(text) = objects {
        obj = write(dir, "objects.json", text);
        args.extend(["--objects", obj.to_str().unwrap()]);
    }
    let (code, _, err) = etho(&args);
    assert_eq!(code, 0, "{err}");
    out.to_str().unwrap().to_string()
}

#[test]
fn contact_on_glued_animals_spans_every_frame() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = ingest(dir.path(), &glued(), None);
    let events = dir.path().join("events.json");
    let (code, _, err) = etho(&["run", "--behavior", "mabe_contact", "--dataset", &bundle, "--out", events.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let dict: EventDict = serde_json::from_str(&std::fs::read_to_string(&events).unwrap()).unwrap();
    assert_eq!(dict.len(), 2);
    for (_, seq) in dict.iter() {
        assert_eq!(seq.events().len(), 1);
        assert_eq!((seq.events()[0].start, seq.events()[0].end), (0, 50));
    }
}

#[test]
fn eval_of_prediction_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = ingest(dir.path(), &crossing(), Some(&objects_json(&square_objects("closed arm"))));
    let (code, events, err) = etho(&["run", "--behavior", "epm_closed_arm", "--dataset", &bundle]);
    assert_eq!(code, 0, "{err}");
    let pred = write(dir.path(), "pred.json", &events);
    let dict: EventDict = serde_json::from_str(&events).unwrap();
    let gt = write(dir.path(), "closed.csv", &labels_csv(&frames_for_animal(&dict, "m")));
    let (code, report, err) = etho(&["eval", "--pred", pred.to_str().unwrap(), "--gt", gt.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let v: Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["f1"], 1.0);
    assert_eq!(v["task"], "closed");
    assert!(report.contains("\"f1\": 1.0"));
}

#[test]
fn define_syntax_error_is_positioned_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "behaviors.etho", "define fast as state(speed > 3)\n\ndefine x as not )\n");
    let session = dir.path().join("s.json");
    let (code, _, err) = etho(&["define", "--file", file.to_str().unwrap(), "--session", session.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("behaviors.etho:3:17: "), "{err}");
    assert!(!session.exists(), "a failed define leaves no session behind");
}

#[test]
fn defined_behavior_runs_from_the_session_file() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = ingest(dir.path(), &crossing(), Some(&objects_json(&square_objects("box"))));
    let file = write(dir.path(), "b.etho", "define inside as object(\"box\", overlap)\n");
    let session = dir.path().join("s.json");
    let s = session.to_str().unwrap();
    let (code, out, err) = etho(&["define", "--file", file.to_str().unwrap(), "--session", s]);
    assert_eq!((code, out.trim()), (0, "inside"), "{err}");

    let (code, events, err) = etho(&["run", "--behavior", "inside", "--dataset", &bundle, "--session", s]);
    assert_eq!(code, 0, "{err}");
    let dict: EventDict = serde_json::from_str(&events).unwrap();
    // every keypoint lies within 6 px of the center, which moves 2 px a frame
    let mask = frames_for_animal(&dict, "m");
    let expected: Vec<bool> = (0..100).map(|f| (28..=72).contains(&f)).collect();
    assert_eq!(mask, expected);

    let (code, out, _) = etho(&["session", "load", "--path", s]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["behaviors"], serde_json::json!(["inside"]));
}

#[test]
fn unknown_behavior_lists_the_known_ones() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = ingest(dir.path(), &glued(), None);
    let (code, _, err) = etho(&["run", "--behavior", "mabe_chace", "--dataset", &bundle]);
    assert_eq!(code, 2);
    assert!(err.contains("unknown behavior `mabe_chace`") && err.contains("mabe_chase"), "{err}");
}

#[test]
fn bad_parameter_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = ingest(dir.path(), &glued(), None);
    let (code, _, err) = etho(&["run", "--behavior", "mabe_contact", "--param", "distance=near", "--dataset", &bundle]);
    assert_eq!(code, 2, "{err}");
    let (code, _, _) = etho(&["run", "--behavior", "mabe_contact", "--param", "distance", "--dataset", &bundle]);
    assert_eq!(code, 1);
}

#[test]
fn usage_help_and_runtime_exit_codes() {
    assert_eq!(etho(&["run", "--frobnicate"]).0, 1);
    assert_eq!(etho(&[]).0, 1);
    let (code, out, _) = etho(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("ingest") && out.contains("serve"));
    let (code, _, err) = etho(&["eval", "--pred", "/nonexistent/p.json", "--gt", "/nonexistent/g.csv"]);
    assert_eq!(code, 3);
    assert!(err.starts_with("/nonexistent/p.json: "), "{err}");
}

#[test]
fn ingest_rejects_out_of_frame_keypoints() {
    let dir = tempfile::tempdir().unwrap();
    let csv = "frame,animal,bodypart,x,y\n0,m,nose,10,10\n";
    let kp = write(dir.path(), "k.csv", csv);
    let out = dir.path().join("b");
    let (code, _, err) = etho(&["ingest", "--keypoints", kp.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let text = std::fs::read_to_string(out.join("dataset.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["frame_size"] = serde_json::json!([5.0, 5.0]);
    let kp = write(dir.path(), "bad.json", &v.to_string());
    let (code, _, err) = etho(&["ingest", "--keypoints", kp.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("bad.json: ") && err.contains("out of frame"), "{err}");
}

#[test]
fn retrieve_ranks_shipped_modules() {
    let (code, out, _) = etho(&["retrieve", "--query", "plot an ethogram of behavior bouts", "--k", "2"]);
    assert_eq!(code, 0);
    let v: Value = serde_json::from_str(&out).unwrap();
    let ranked = v.as_array().unwrap();
    assert_eq!(ranked.len(), 2);
    assert_eq!(ranked[0]["name"], "ethogram");
    assert_eq!(etho(&["retrieve", "--query", "plot an ethogram of behavior bouts", "--k", "2"]).1, out);
}

#[test]
fn ethogram_and_trajectory_render_svg() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = ingest(dir.path(), &crossing(), Some(&objects_json(&square_objects("closed arm"))));
    let events = dir.path().join("closed.json");
    let ev = events.to_str().unwrap();
    assert_eq!(etho(&["run", "--behavior", "epm_closed_arm", "--dataset", &bundle, "--out", ev]).0, 0);

    let plot = dir.path().join("plot.svg");
    let (code, _, err) = etho(&["ethogram", "--events", ev, "--out", plot.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let svg = std::fs::read_to_string(&plot).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("class=\"tick\""));

    let traj = dir.path().join("traj.svg");
    let (code, _, err) = etho(&[
        "traj", "--dataset", &bundle, "--animal", "m", "--bodyparts", "nose", "--events", ev, "--out",
        traj.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let svg = std::fs::read_to_string(&traj).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    assert!(svg.contains("data-bodypart=\"nose\""));

    let (code, _, err) = etho(&["traj", "--dataset", &bundle, "--animal", "rat", "--out", traj.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("rat"), "{err}");
}

#[test]
fn session_save_then_load_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let file = write(dir.path(), "b.etho", "define fast as state(speed > 3)\n");
    let s = dir.path().join("s.json");
    assert_eq!(etho(&["define", "--file", file.to_str().unwrap(), "--session", s.to_str().unwrap()]).0, 0);
    let copy = dir.path().join("copy.json");
    let (code, _, err) = etho(&["session", "save", "--path", copy.to_str().unwrap(), "--from", s.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(std::fs::read_to_string(&copy).unwrap(), std::fs::read_to_string(&s).unwrap());

    let broken = write(dir.path(), "broken.json", "{\"version\": 99}");
    let (code, _, err) = etho(&["session", "load", "--path", broken.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("version"), "{err}");
}
