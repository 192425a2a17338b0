"""
Command-line interface for carrier-seg.

This module drives the pipeline: synthetic image generation, simulation with
snapshots and trace export, region grouping, merging, and all renderings.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from . import __version__
from .carrier_sim import (
    SimulationResult, carrier_image, sign_counts, sign_map, simulate
)
from .config import ConfigurationLoader, RunConfig, check_parameter_hints
from .exceptions import (
    CarrierSegError, ConfigurationError, FileOperationError, PGMParseError, ValidationError
)
from .pgm_io import (
    GrayImage, ImageKind, make_test_image, read_pgm_file, render_label_map,
    render_sign_map, write_labels16, write_pgm8
)
from .region_ops import (
    Partition, group_regions, merge_to_target, regions_to_csv, validate_partition
)
from .ui import Colors, ProgressBar, StatusDisplay
from .utils import LoggingManager, ProgressManager, atomic_write, format_fixed

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO_ERROR = 4

MANIFEST_NAME = 'manifest.txt'
TRACE_NAME = 'trace.csv'


def _parse_size(text: str) -> Tuple[int, int]:
    try:
        width, height = (int(part) for part in text.lower().split('x'))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got '{text}'")
    return width, height


def _parse_snapshots(text: str) -> List[int]:
    if not text.strip():
        return []
    try:
        return [int(part) for part in text.split(',')]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated iterations, got '{text}'")


def _add_run_arguments(parser: argparse.ArgumentParser, with_merge: bool) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument('--input', metavar='PATH', help='8-bit PGM image to segment')
    source.add_argument('--gen', nargs=2, metavar=('KIND', 'WxH'),
                        help='Generate a test image (TwoHalves, Rectangle, ThreeShapes)')
    parser.add_argument('--out', metavar='DIR', required=True, help='Output directory')
    parser.add_argument('--k1', type=float, help='Drift coefficient (default 0.05)')
    parser.add_argument('--k2', type=float, help='Diffusion coefficient, < 0.25 (default 0.2)')
    parser.add_argument('--epsilon', type=float,
                        help='Stop when mean |change| drops below this (default 1e-6)')
    parser.add_argument('--max-iters', type=int, help='Iteration cap (default 100000)')
    parser.add_argument('--zero-tol', type=float,
                        help='Net carrier magnitude treated as zero (default 0)')
    parser.add_argument('--snapshots', type=_parse_snapshots, default=[],
                        help='Comma-separated iterations to capture sign maps at')
    if with_merge:
        parser.add_argument('--target-regions', type=int,
                            help='Merge regions down to this count')
    parser.add_argument('--workers', type=int, help='Row bands simulated in parallel')
    parser.add_argument('-c', '--config', type=str, help='Path to specific config file')
    parser.add_argument('--log-dir', type=str, help='Directory for log files')
    parser.add_argument('-v', '--verbose', action='store_true', help='Show verbose output')


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        description='Image segmentation by virtual carrier drift and diffusion')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    subparsers = parser.add_subparsers(dest='command', help='Available commands')
    subparsers.required = True

    gen_parser = subparsers.add_parser('gen', help='Write a synthetic test image')
    gen_parser.add_argument('kind', help='TwoHalves, Rectangle or ThreeShapes')
    gen_parser.add_argument('width', type=int)
    gen_parser.add_argument('height', type=int)
    gen_parser.add_argument('out_path', help='Destination PGM file')

    segment_parser = subparsers.add_parser(
        'segment', help='Simulate, group and optionally merge regions')
    _add_run_arguments(segment_parser, with_merge=True)

    trace_parser = subparsers.add_parser('trace', help='Simulate and write the convergence trace')
    _add_run_arguments(trace_parser, with_merge=False)

    return parser.parse_args(argv)


def build_config(args: argparse.Namespace) -> RunConfig:
    """
    Merge config file / environment settings with command-line flags.

    Raises:
        ConfigurationError: If the resulting configuration is invalid
    """
    overrides, source = ConfigurationLoader().load_overrides(args.config)

    flags = {
        'k1': args.k1, 'k2': args.k2, 'epsilon': args.epsilon,
        'max_iters': args.max_iters, 'zero_tol': args.zero_tol,
        'workers': args.workers, 'log_path': args.log_dir,
        'target_regions': getattr(args, 'target_regions', None),
    }
    overrides.update({key: value for key, value in flags.items() if value is not None})

    config = RunConfig(output_dir=args.out, snapshot_iters=list(args.snapshots),
                       verbose=args.verbose, config_source=source, **overrides)
    if args.input is not None:
        config.input_path = args.input
    else:
        kind, size = args.gen
        config.gen_kind = kind
        try:
            config.gen_width, config.gen_height = _parse_size(size)
        except argparse.ArgumentTypeError as e:
            raise ConfigurationError(str(e))
    config.validate()
    return config


class SegmentationWorkflow:
    """Main workflow orchestrator for one pipeline run."""

    def __init__(self, config: RunConfig, progress: Optional[ProgressManager] = None):
        """
        Initialize workflow with configuration.

        Args:
            config: Run configuration
            progress: User feedback sink
        """
        self.config = config
        self.progress = progress or ProgressManager()
        self.logger = logging.getLogger('carrier_seg.cli')
        self.output_dir = Path(config.output_dir)

    def _load_image(self) -> GrayImage:
        if self.config.config_source != 'defaults':
            self.progress.show_info(f"Settings from {self.config.config_source}")
        if self.config.input_path is not None:
            self.progress.show_operation(f"Reading {self.config.input_path}")
            return read_pgm_file(self.config.input_path)
        kind = ImageKind.parse(self.config.gen_kind)
        self.progress.show_operation(
            f"Generating {kind.value} {self.config.gen_width}x{self.config.gen_height}")
        return make_test_image(kind, self.config.gen_width, self.config.gen_height)

    def _prepare_output_dir(self) -> None:
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise FileOperationError(f"Cannot create output directory {self.output_dir}: {e}")

    def _write(self, name: str, data) -> None:
        path = atomic_write(self.output_dir / name, data)
        self.logger.debug(f"Wrote {path}", extra={'details': f"{len(data)} bytes"})

    def _simulate(self, img: GrayImage) -> SimulationResult:
        params = self.config.to_sim_params()
        self.progress.show_operation(
            f"Simulating carrier immigration on {img.width}x{img.height} pixels")

        bar = None
        if self.config.verbose and sys.stderr.isatty():
            bar = ProgressBar(params.max_iters)
        stride = max(params.max_iters // 200, 1)

        def on_iteration(iteration: int, change: float) -> None:
            if bar is not None and iteration % stride == 0:
                bar.update(iteration, f"mean |change| {change:.3e}")

        result = simulate(img, params, on_iteration=on_iteration)
        if bar is not None:
            bar.finish(f"{result.iterations} iterations")

        final_change = result.trace.values[-1]
        if result.converged:
            self.progress.complete_operation(
                f"Balance reached after {result.iterations} iterations "
                f"(mean |change| {final_change:.3e})")
        else:
            self.progress.show_warning(
                f"No balance within {params.max_iters} iterations "
                f"(mean |change| {final_change:.3e}); writing partial results")
        return result

    def execute_trace(self) -> int:
        """Run the simulation and write only the convergence trace."""
        img = self._load_image()
        self._prepare_output_dir()
        result = self._simulate(img)
        self._write(TRACE_NAME, result.trace.to_csv())
        self.progress.show_success(f"Trace written to {self.output_dir / TRACE_NAME}")
        return EXIT_OK if result.converged else EXIT_NOT_CONVERGED

    def execute_segment(self) -> int:
        """Run simulation, grouping, optional merging, and write every output."""
        config = self.config
        img = self._load_image()
        self._prepare_output_dir()
        result = self._simulate(img)

        for iteration, snapshot in result.snapshots:
            self._write(f'sign_iter_{iteration}.pgm', write_pgm8(render_sign_map(snapshot)))
        final_signs = sign_map(result.final, config.zero_tol)
        self._write('sign_final.pgm', write_pgm8(render_sign_map(final_signs)))
        self._write('carrier_final.pgm', write_pgm8(carrier_image(result.final)))
        self._write(TRACE_NAME, result.trace.to_csv())

        self.progress.show_operation("Grouping regions by net carrier sign")
        grouped = group_regions(final_signs, img)
        validate_partition(grouped, img)
        self._write_partition(grouped, 'labels.pgm', 'labels_view.pgm', 'regions.csv')
        print(f"Regions after grouping: {grouped.region_count}")

        merged: Optional[Partition] = None
        if config.target_regions is not None:
            self.progress.show_operation(f"Merging regions down to {config.target_regions}")
            merged = merge_to_target(grouped, config.target_regions)
            validate_partition(merged, img)
            self._write_partition(
                merged, 'merged_labels.pgm', 'merged_view.pgm', 'merged_regions.csv')
            print(f"Regions after merging: {merged.region_count}")

        self._write(MANIFEST_NAME, self._manifest(img, result, final_signs, grouped, merged))

        StatusDisplay.show_header("Segmentation summary", config.source_label)
        StatusDisplay.show_summary([
            ('iterations', result.iterations),
            ('converged', result.converged),
            ('regions (grouped)', grouped.region_count),
            ('regions (merged)', merged.region_count if merged else '-'),
            ('output', self.output_dir),
        ])
        return EXIT_OK if result.converged else EXIT_NOT_CONVERGED

    def _write_partition(self, partition: Partition, labels_name: str,
                         view_name: str, csv_name: str) -> None:
        self._write(labels_name, write_labels16(partition.label_map))
        self._write(view_name, write_pgm8(render_label_map(partition.label_map)))
        self._write(csv_name, regions_to_csv(partition))

    def _manifest(self, img: GrayImage, result: SimulationResult, final_signs,
                  grouped: Partition, merged: Optional[Partition]) -> str:
        positive, negative, zero = sign_counts(final_signs)
        entries = list(self.config.as_manifest())
        entries += [
            ('width', img.width),
            ('height', img.height),
            ('iterations', result.iterations),
            ('converged', 'true' if result.converged else 'false'),
            ('final_mean_abs_change', format_fixed(result.trace.values[-1])),
            ('positive_pixels', positive),
            ('negative_pixels', negative),
            ('zero_pixels', zero),
            ('regions_grouped', grouped.region_count),
            ('regions_merged', merged.region_count if merged is not None else ''),
            ('version', __version__),
        ]
        return ''.join(f"{key}={value}\n" for key, value in entries)

    def handle_error(self, error: Exception) -> int:
        """Report an error and map it to an exit code."""
        if isinstance(error, ConfigurationError):
            self.progress.show_error(f"Configuration error: {error}")
            code = EXIT_INVALID_CONFIG
        elif isinstance(error, PGMParseError):
            self.progress.show_error(f"Invalid PGM input: {error}")
            code = EXIT_INVALID_CONFIG
        elif isinstance(error, ValidationError):
            self.progress.show_error(f"Validation error: {error}")
            code = EXIT_INVALID_CONFIG
        elif isinstance(error, FileOperationError):
            self.progress.show_error(f"File error: {error}")
            code = EXIT_IO_ERROR
        else:
            self.progress.show_error(f"Unexpected error: {error}")
            code = EXIT_FAILURE

        self.logger.debug(f"Error occurred: {type(error).__name__}",
                          extra={'details': f"Details: {error}"})
        return code


def cmd_gen(kind: str, width: int, height: int, out_path: str,
            progress: Optional[ProgressManager] = None) -> int:
    """Write a synthetic test image as 8-bit PGM."""
    progress = progress or ProgressManager()
    try:
        img = make_test_image(kind, width, height)
        atomic_write(out_path, write_pgm8(img))
    except FileOperationError as e:
        progress.show_error(f"File error: {e}")
        return EXIT_IO_ERROR
    except CarrierSegError as e:
        progress.show_error(f"Invalid test image request: {e}")
        return EXIT_INVALID_CONFIG
    progress.show_success(f"Wrote {ImageKind.parse(kind).value} {width}x{height} to {out_path}")
    return EXIT_OK


def _run(config: RunConfig, command: str, progress: ProgressManager) -> int:
    workflow = SegmentationWorkflow(config, progress)
    try:
        if command == 'trace':
            return workflow.execute_trace()
        return workflow.execute_segment()
    except KeyboardInterrupt:
        progress.show_warning("Operation cancelled")
        return EXIT_FAILURE
    except Exception as e:
        return workflow.handle_error(e)


def cmd_segment(cfg: RunConfig, progress: Optional[ProgressManager] = None) -> int:
    """Full pipeline; 0 iff the simulation converged."""
    return _run(cfg, 'segment', progress or ProgressManager())


def cmd_trace(cfg: RunConfig, progress: Optional[ProgressManager] = None) -> int:
    """Simulation plus trace.csv only; same exit semantics as cmd_segment."""
    return _run(cfg, 'trace', progress or ProgressManager())


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the carrier-seg CLI."""
    args = parse_args(argv)
    progress = ProgressManager()
    Colors.enabled = sys.stdout.isatty()

    if args.command == 'gen':
        logging_manager = LoggingManager()
        try:
            return cmd_gen(args.kind, args.width, args.height, args.out_path, progress)
        finally:
            logging_manager.close()

    try:
        config = build_config(args)
    except ConfigurationError as e:
        progress.show_error(f"Configuration error: {e}")
        return EXIT_INVALID_CONFIG

    try:
        logging_manager = LoggingManager(config.log_path, config.verbose)
    except FileOperationError as e:
        progress.show_error(f"File error: {e}")
        return EXIT_IO_ERROR

    try:
        logging_manager.get_logger().debug(
            f"Starting {args.command}",
            extra={'details': f"source={config.source_label}, out={config.output_dir}, "
                              f"settings={config.config_source}"})
        check_parameter_hints(config)
        if args.command == 'trace':
            return cmd_trace(config, progress)
        return cmd_segment(config, progress)
    finally:
        logging_manager.close()


if __name__ == "__main__":
    sys.exit(main())
