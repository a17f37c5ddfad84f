"""
CLI principal do pipeline
"""
import argparse
import logging
import sys
from typing import List, Optional

import structlog

from dgre import __version__
from dgre.config import load_config
from dgre.core.exceptions import DGREException
from dgre.core.logging import configure_logging
from dgre.models.results import ErrorCode
from dgre.services.artifacts import write_resolved_config
from dgre.workers.executor import StageExecutor
from dgre.workers.stages import STAGES, cmd_all

logger = structlog.get_logger(__name__)

COMMANDS = list(STAGES) + ["all"]


class _ArgumentParser(argparse.ArgumentParser):
    """Erros de uso saem com o código de configuração inválida (1)"""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Arquivo TOML de configuração")
    common.add_argument("--out", help="Diretório da execução (out_dir)")
    common.add_argument("--threads", type=int, help="Threads de trabalho (1 = reprodutível bit a bit)")
    common.add_argument("--seed", type=int, help="Semente global (padrão: DGRE_SEED ou 42)")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Sobrescreve um campo da configuração (repetível)",
    )
    common.add_argument("--log-json", action="store_true", help="Logs em JSON, um objeto por linha")

    parser = _ArgumentParser(prog="dgre", description="Pipeline de recomendação cross-market com protótipos em grafo")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)
    for name in COMMANDS:
        help_text = "Executa todas as etapas em sequência" if name == "all" else f"Etapa {name}"
        sub = commands.add_parser(name, parents=[common], help=help_text)
        if name == "all":
            sub.add_argument("--no-ablate", action="store_true", help="Pula a etapa de ablação")
    return parser


def run(args: argparse.Namespace) -> List[str]:
    config = load_config(
        args.config,
        args.overrides,
        seed=args.seed,
        out_dir=args.out,
        threads=args.threads,
    )
    logging.getLogger().setLevel(config.log_level.upper())
    write_resolved_config(config, config.run_dir)
    executor = StageExecutor(config.threads)
    logger.info(
        "Command started",
        command=args.command,
        run_dir=str(config.run_dir),
        seed=config.seed,
        threads=config.threads,
    )

    if args.command == "all":
        outputs = cmd_all(config, executor, ablate=not args.no_ablate)
    else:
        outputs = [f"{args.command}/{output}" for output in STAGES[args.command](config, executor)]
    return [str(config.run_dir / output) for output in outputs]


def main(argv: Optional[List[str]] = None) -> int:
    """
    Ponto de entrada da CLI

    Returns:
        0 em sucesso, 1 para configuração inválida, 2 para artefato ausente,
        3 para falhas de execução
    """
    args = build_parser().parse_args(argv)
    configure_logging("INFO", json_logs=args.log_json)

    try:
        outputs = run(args)
    except DGREException as e:
        logger.error(
            "Command failed",
            command=args.command,
            error_code=e.error_code.value,
            message=e.message,
            details=e.details,
        )
        return e.exit_code
    except Exception as e:
        logger.exception(
            "Unexpected error",
            command=args.command,
            error_code=ErrorCode.INTERNAL_ERROR.value,
            error=str(e),
        )
        return DGREException.exit_code

    for output in outputs:
        print(output)
    logger.info("Command completed", command=args.command, outputs=len(outputs))
    return 0


if __name__ == "__main__":
    sys.exit(main())
