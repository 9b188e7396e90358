use std::ffi::CString;

use pyo3::prelude::*;
use twinpilot::twinpilot;

fn run(code: &str) {
    pyo3::append_to_inittab!(twinpilot);
    Python::initialize();
    Python::attach(|py| {
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, None, None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn module_round_trip() {
    run(r#"
import twinpilot

call = twinpilot.FunctionCall("query('white plastic cylinder')")
assert call.name == "query" and call.args == ["white plastic cylinder"]
assert str(twinpilot.FunctionCall(str(call))) == str(call)

lines = twinpilot.replay_script("storage-export")
assert len(lines) == 12 and lines[0].startswith("[Storage Station]")

s = twinpilot.Session("demo")
s.run_until(s.schedule("demo-scenario"))
assert s.now == 300

try:
    s.invoke("Nowhere", "f()")
except twinpilot.TwinpilotError as e:
    assert "Nowhere" in str(e)
else:
    raise AssertionError("unknown module accepted")

report = twinpilot.Dataset.sample().evaluate()
assert report["overall"]["matches"] == 10
"#);
}
