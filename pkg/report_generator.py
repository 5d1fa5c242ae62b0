"""
Report generation module.
"""

import math
from datetime import datetime
from pathlib import Path


def _fmt(value):
    if isinstance(value, bool):
        return 'yes' if value else 'no'
    if isinstance(value, float):
        if math.isnan(value):
            return '-'
        return f"{value:.4g}"
    return str(value)


class ReportGenerator:
    """Generates markdown reports summarizing a validate, solve or converge run."""

    TITLES = {
        'validate': "Invariant Validation Report",
        'solve': "Linearized Solve Report",
        'converge': "Refinement Study Report",
    }

    def __init__(self, command, config, results, output_dir):
        """
        Initialize the report generator.

        Args:
            command: 'validate', 'solve' or 'converge'
            config: RunConfig of the run
            results: Dict with optional keys 'checks' (list of Check),
                'metrics' (flat dict), 'table' (DataFrame) and 'files' (list of names)
            output_dir: Output directory path
        """
        self.command = command
        self.config = config
        self.results = results
        self.output_dir = Path(output_dir)

    def _configuration_lines(self):
        cfg = self.config
        bg = cfg.background
        return [
            "## Configuration",
            "",
            f"- **Config file:** {cfg.source or '(defaults)'}",
            f"- **Grid:** {cfg.grid.n_r} x {cfg.grid.n_theta}, dt = {cfg.grid.dt}, T = {cfg.grid.t_final}",
            f"- **Equation of state:** gamma = {cfg.eos.gamma}, K = {cfg.eos.K}, rho_bar0 = {cfg.eos.rho_bar0}",
            f"- **Background:** {bg.family}",
            f"- **Scenario:** {cfg.scenario.kind} (mode {cfg.scenario.mode}, order {cfg.scenario.order})",
            f"- **Seed:** {self.results.get('seed', 0)}",
            "",
        ]

    def _check_lines(self, checks):
        passed = sum(c.passed for c in checks)
        lines = [
            "## Checks",
            "",
            f"**{passed} of {len(checks)} checks passed.**",
            "",
            "| Suite | Check | Value | Bound | Status |",
            "|-------|-------|-------|-------|--------|",
        ]
        for c in checks:
            bound = '' if c.bound == 'info' else f"{c.bound} {_fmt(c.threshold)}"
            status = 'info' if c.bound == 'info' else ('PASS' if c.passed else 'FAIL')
            lines.append(f"| {c.suite} | {c.name} | {_fmt(c.value)} | {bound} | {status} |")
        lines.append("")
        return lines

    def generate_report(self):
        """
        Generate a markdown report file.

        Returns:
            Path to generated report file
        """
        report_lines = [
            f"# {self.TITLES.get(self.command, 'Run Report')}",
            "",
            f"**Generated:** {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}",
            "",
        ]
        report_lines.extend(self._configuration_lines())

        metrics = self.results.get('metrics', {})
        if metrics:
            report_lines.extend(["## Summary", ""])
            for key, value in metrics.items():
                report_lines.append(f"- **{key}:** {_fmt(value)}")
            report_lines.append("")

        checks = self.results.get('checks', [])
        if checks:
            report_lines.extend(self._check_lines(checks))

        table = self.results.get('table')
        if table is not None and len(table):
            columns = list(table.columns)
            report_lines.extend([
                "## Table",
                "",
                "| " + " | ".join(columns) + " |",
                "|" + "|".join("---" for _ in columns) + "|",
            ])
            for _, row in table.iterrows():
                report_lines.append("| " + " | ".join(_fmt(row[c]) for c in columns) + " |")
            report_lines.append("")

        files = self.results.get('files', [])
        if files:
            report_lines.extend(["## Files Generated", ""])
            report_lines.extend(f"- `{name}`" for name in files)
            report_lines.append("")

        report_file = self.output_dir / f"{self.config.output.tag}_{self.command}_report.md"
        with open(report_file, 'w') as f:
            f.write('\n'.join(report_lines))

        return report_file
