import sys

from Multiplexing.cli import main as cli_main


def main():
    sys.exit(cli_main())  # <-- analytic / simulate / sweep / crossover


if __name__ == "__main__":
    main()
