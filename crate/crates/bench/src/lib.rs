//! Synthetic pipelines for benchmarks.

use std::fmt::Write;

/// A layered manifest: `tasks` per-recording steps, each reading the previous
/// step's output, followed by one aggregate step over the last layer.
pub fn layered_manifest(tasks: usize, recordings: usize) -> String {
    let mut out = String::new();
    let recs: Vec<String> = (0..recordings).map(|r| format!("\"sub{r:03}\"")).collect();
    writeln!(out, "[pipeline]\nname = \"bench\"\nrecordings = [{}]\n", recs.join(", ")).unwrap();
    out.push_str("[params]\nn_jobs = 1\n\n[templates]\n");
    for t in 0..tasks {
        writeln!(out, "s{t} = \"out/{{recording}}/step{t}.dat\"").unwrap();
    }
    for t in 0..tasks {
        let deps = if t == 0 {
            "\"data/{recording}.raw\"".to_string()
        } else {
            format!("\"s{}\"", t - 1)
        };
        writeln!(
            out,
            "\n[[task]]\nname = \"{t:02}_step\"\nkind = \"per_recording\"\ncommand = \"sh {t:02}_step.sh {{recording}}\"\ndeps = [{deps}]\ntargets = [\"s{t}\"]\nno_report = true"
        )
        .unwrap();
    }
    writeln!(
        out,
        "\n[[task]]\nname = \"{tasks:02}_grand\"\nkind = \"aggregate\"\ncommand = \"sh {tasks:02}_grand.sh\"\ndeps = [\"s{}\"]\ntargets = [\"out/grand.dat\"]\nno_report = true\nfinal = true",
        tasks.saturating_sub(1)
    )
    .unwrap();
    out
}
