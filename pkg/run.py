"""
SiamAdapt - Main Entry Point
Run this file to use the command-line interface
"""

from siamadapt.commands import cli


def main():
    """Main application entry point"""
    cli(prog_name='siamadapt')


if __name__ == '__main__':
    main()
