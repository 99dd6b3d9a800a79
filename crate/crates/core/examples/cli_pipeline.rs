//! The whole pipeline through the command-line entry point at smoke-test
//! length: data, teacher, both tokenizer stages, generator, fine-tuning,
//! sampling and evaluation.

fn main() {
    let run = std::env::temp_dir().join("vgt-cli-example");
    let run = run.to_str().expect("utf-8 temp dir");
    let steps = [
        "teacher_steps=100",
        "ae_steps=100",
        "stage2_steps=100",
        "ar_steps=100",
        "finetune_steps=100",
        "sample_steps=10",
        "warmup=10",
    ];
    let mut common = vec!["vgt", "--preset", "quick", "--run-dir", run];
    for s in &steps {
        common.extend(["--set", s]);
    }
    let data = format!("{run}/data");
    let samples = format!("{run}/samples");
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen-data", "--n", "16", "--out", &data],
        vec!["pretrain-teacher"],
        vec!["train-ae", "--stage", "1"],
        vec!["train-ae", "--stage", "2"],
        vec!["train-ar"],
        vec!["finetune"],
        vec!["sample", "--count", "8", "--group-size", "4", "--out", &samples],
        vec!["eval", "--task", "recon"],
        vec!["eval", "--task", "generate", "--per-class", "1", "--group-size", "4"],
        vec!["grad-check"],
    ];
    for cmd in commands {
        println!("$ vgt {}", cmd.join(" "));
        let code = vgt::cli::run(common.iter().copied().chain(cmd.iter().copied()));
        if code != 0 {
            std::process::exit(code);
        }
    }
}
