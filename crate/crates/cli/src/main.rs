//! Spectral-shift fine-tuning toolkit for a toy diffusion model.
//!
//! Exit codes: 0 success, 1 contract error (error name on stderr),
//! 2 usage error.

mod args;
mod commands;
mod csvio;
mod manifest;
mod ppm;

use args::{flag, multi, switch, FlagSpec};

const USAGE: &str = "svdiff <command> [options]

commands:
  pretrain      -o base.ckpt [--steps N] [--lr F] [--seed N] [--corpus-seed N] [--metrics F]
  svd-cache     <base.ckpt> -o cache.svd
  finetune      <base.ckpt> --target img.ppm... --prompt TEXT -o out.{svdd|ckpt}
                [--mode svdiff|full|lora] [--steps N] [--lambda F]
                [--lr-spectral F] [--lr-1d F] [--lr-full F] [--lr-lora F]
                [--prior img.ppm...] [--prior-prompt TEXT] [--gen-priors N]
                [--cache F] [--seed N] [--metrics F]
  edit          <base.ckpt> <image.ppm> --caption TEXT --prompt TEXT -o out.ppm
                [--invert] [--eta F] [--slerp-alpha F] [--cfg F] [--steps N]
                [--sample-steps N] [--lr-spectral F] [--lr-1d F] [--cache F]
                [--save-delta F] [--seed N]
  sample        <model.ckpt> --prompt TEXT -o out.ppm [--delta F] [--cache F]
                [--negative TEXT]... [--beta F] [--cfg F] [--eta F] [--steps N] [--seed N]
  combine       <a.svdd> <b.svdd>... -o out.svdd
  interp        <a.svdd> <b.svdd> --alpha F -o out.svdd
  scale         <a.svdd> --s F -o out.svdd
  rank          <a.svdd> --k N -o out.svdd
  corr          <a.svdd> <b.svdd>... -o corr.csv
  cutmix-train  <base.ckpt> --subject V:CLASS:FILES --subject V:CLASS:FILES -o out.svdd
                [--prob F] [--unmix-weight F] [--steps N] [--lambda F]
                [--lr-spectral F] [--lr-1d F] [--gen-priors N] [--cache F]
                [--seed N] [--metrics F]
  export        --kind corr-matrix|scale-sweep|rank-sweep|metrics ...
  verify        [--model base.ckpt]

every command accepts --manifest FILE to replay a recorded run; the
SVDIFF_SEED environment variable overrides the default seed 0.";

struct Command {
    name: &'static str,
    flags: Vec<FlagSpec>,
    run: fn(&args::Parsed) -> svdiff_linalg::Result<()>,
}

const COMMON: [FlagSpec; 2] = [flag("seed"), flag("out")];

fn commands() -> Vec<Command> {
    vec![
        Command {
            name: "pretrain",
            flags: vec![
                flag("steps"),
                flag("lr"),
                flag("corpus-seed"),
                flag("metrics"),
                COMMON[0],
                COMMON[1],
            ],
            run: commands::train::pretrain_cmd,
        },
        Command {
            name: "svd-cache",
            flags: vec![COMMON[0], COMMON[1]],
            run: commands::train::svd_cache_cmd,
        },
        Command {
            name: "finetune",
            flags: vec![
                flag("mode"),
                flag("steps"),
                flag("lambda"),
                flag("lr-spectral"),
                flag("lr-1d"),
                flag("lr-full"),
                flag("lr-lora"),
                multi("target"),
                flag("prompt"),
                multi("prior"),
                flag("prior-prompt"),
                flag("gen-priors"),
                flag("cache"),
                flag("metrics"),
                COMMON[0],
                COMMON[1],
            ],
            run: commands::train::finetune_cmd,
        },
        Command {
            name: "edit",
            flags: vec![
                flag("caption"),
                flag("prompt"),
                switch("invert"),
                flag("eta"),
                flag("slerp-alpha"),
                flag("cfg"),
                flag("steps"),
                flag("sample-steps"),
                flag("lr-spectral"),
                flag("lr-1d"),
                flag("cache"),
                flag("save-delta"),
                COMMON[0],
                COMMON[1],
            ],
            run: commands::sample::edit_cmd,
        },
        Command {
            name: "sample",
            flags: vec![
                flag("prompt"),
                multi("negative"),
                flag("delta"),
                flag("cache"),
                flag("beta"),
                flag("cfg"),
                flag("eta"),
                flag("steps"),
                COMMON[0],
                COMMON[1],
            ],
            run: commands::sample::sample_cmd,
        },
        Command {
            name: "combine",
            flags: vec![COMMON[0], COMMON[1]],
            run: commands::arith::combine_cmd,
        },
        Command {
            name: "interp",
            flags: vec![flag("alpha"), COMMON[0], COMMON[1]],
            run: commands::arith::interp_cmd,
        },
        Command {
            name: "scale",
            flags: vec![flag("s"), COMMON[0], COMMON[1]],
            run: commands::arith::scale_cmd,
        },
        Command {
            name: "rank",
            flags: vec![flag("k"), COMMON[0], COMMON[1]],
            run: commands::arith::rank_cmd,
        },
        Command {
            name: "corr",
            flags: vec![COMMON[0], COMMON[1]],
            run: commands::arith::corr_cmd,
        },
        Command {
            name: "cutmix-train",
            flags: vec![
                multi("subject"),
                flag("prob"),
                flag("unmix-weight"),
                flag("steps"),
                flag("lambda"),
                flag("lr-spectral"),
                flag("lr-1d"),
                flag("lr-full"),
                flag("lr-lora"),
                flag("mode"),
                flag("gen-priors"),
                flag("cache"),
                flag("metrics"),
                COMMON[0],
                COMMON[1],
            ],
            run: commands::train::cutmix_train_cmd,
        },
        Command {
            name: "export",
            flags: vec![
                flag("kind"),
                flag("values"),
                flag("ks"),
                flag("prompt"),
                flag("steps"),
                flag("out-dir"),
                flag("cache"),
                COMMON[0],
                COMMON[1],
            ],
            run: commands::export::export_cmd,
        },
        Command {
            name: "verify",
            flags: vec![flag("model"), COMMON[0]],
            run: commands::verify::verify_cmd,
        },
    ]
}

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let Some(cmd_name) = argv.first() else {
        eprintln!("{USAGE}");
        std::process::exit(2);
    };
    if cmd_name == "--help" || cmd_name == "help" {
        println!("{USAGE}");
        return;
    }
    let table = commands();
    let Some(cmd) = table.iter().find(|c| c.name == cmd_name) else {
        eprintln!("unknown command {cmd_name:?}\n{USAGE}");
        std::process::exit(2);
    };
    let parsed = match args::parse(&argv[1..], &cmd.flags, USAGE) {
        Ok(p) => p,
        Err(args::UsageError(msg)) => {
            eprintln!("{msg}");
            std::process::exit(2);
        }
    };
    if let Err(e) = (cmd.run)(&parsed) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
