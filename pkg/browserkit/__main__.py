from browserkit.cli import main

raise SystemExit(main())
